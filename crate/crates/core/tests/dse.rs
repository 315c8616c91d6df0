use std::path::Path;

use agcosim::cosim::{RadiusSource, Scenario};
use agcosim::dse::{feed_cost_at, search_tag_spacing, SearchConfig};
use agcosim::scenario;

fn feeding() -> Scenario {
    scenario::load_file(&Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios/feeding.scn")).unwrap()
}

#[test]
fn feed_cost_is_deterministic_per_spacing() {
    let s = feeding();
    assert_eq!(feed_cost_at(&s, 2.4), feed_cost_at(&s, 2.4));
    // Every cage is fed when the radius is right: cost is minus the count.
    assert_eq!(feed_cost_at(&s, 2.4), -8.0);
}

#[test]
fn infeasible_search_reports_densest_spacing() {
    let mut s = feeding();
    // A 10 % radius error misses even the first cage.
    s.localization.radius = RadiusSource::Fixed(0.26);
    let search = SearchConfig { coarse: 8, tol: 0.5, ..SearchConfig::default() };
    let r = search_tag_spacing(&s, &search).unwrap();
    assert_eq!(r.x, search.lo);
    assert_eq!(r.cost, 0.0);
    assert!(r.warning.unwrap().contains("no feasible"));
}

#[test]
fn biased_radius_gives_interior_optimum() {
    let mut s = feeding();
    s.localization.radius = RadiusSource::Estimator { bias: -0.005 };
    let r = search_tag_spacing(&s, &SearchConfig::default()).unwrap();
    assert!(r.x > 1.0 && r.x < 6.0, "{r:?}");
    assert!(r.cost < 0.0);
}
