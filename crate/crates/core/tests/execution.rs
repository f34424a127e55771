//! Parallel and sequential execution agree bit for bit.

use passkit::beamforming::scaling_law_curve;
use passkit::capacity::{uplink_regions, RegionSettings, UserPowers};
use passkit::geometry::{RfConstants, Scenario, UserPosition, Waveguide};
use passkit::mc::McSettings;
use passkit::metrics::{ergodic_rate_fixed_mc, outage_fixed, BlockageModel, ServiceRegion};
use passkit::par::Execution;
use proptest::prelude::*;

fn constants() -> RfConstants {
    RfConstants::new(0.01, 1.4, 1e-11, 1.0).unwrap()
}

#[test]
fn monte_carlo_matches_across_modes() {
    let eta = constants().eta.powi(2);
    let settings = |exec| McSettings::new(300_000, 9).with_exec(exec);
    let seq = ergodic_rate_fixed_mc(10.0, 3.0, 1e12, eta, &settings(Execution::Sequential));
    let par = ergodic_rate_fixed_mc(10.0, 3.0, 1e12, eta, &settings(Execution::Parallel));
    assert_eq!(seq, par);

    let region = ServiceRegion::new(10.0, 10.0).unwrap();
    let blockage = BlockageModel::new(0.1).unwrap();
    let run = |exec| outage_fixed(&region, 3.0, 1e12, eta, &blockage, 1.0, &settings(exec)).unwrap();
    assert_eq!(run(Execution::Sequential), run(Execution::Parallel));
}

#[test]
fn sweeps_match_across_modes() {
    let ms = [2, 4, 8, 16];
    let a = scaling_law_curve(&ms, 2.0, 0.005, constants(), Execution::Sequential).unwrap();
    let b = scaling_law_curve(&ms, 2.0, 0.005, constants(), Execution::Parallel).unwrap();
    assert_eq!(a, b);

    let s = Scenario::new(
        constants(),
        vec![Waveguide::new(0.0, 3.0, 10.0, 0.005).unwrap()],
        vec![UserPosition::new(2.0, 1.0, 0.0), UserPosition::new(8.0, -2.0, 0.0)],
    )
    .unwrap();
    let p = UserPowers::new(1.0, 1.0).unwrap();
    let settings = |exec| RegionSettings {
        alpha_points: 5,
        grid_res: 51,
        exec,
        ..RegionSettings::default()
    };
    let seq = uplink_regions(&s, 2, p, &settings(Execution::Sequential)).unwrap();
    let par = uplink_regions(&s, 2, p, &settings(Execution::Parallel)).unwrap();
    assert_eq!(seq, par);
}

proptest! {
    #[test]
    fn scenario_toml_round_trip(
        y in -5.0..5.0f64,
        z in 0.5..10.0f64,
        length in 1.0..50.0f64,
        ux in 0.0..50.0f64,
        uy in -5.0..5.0f64,
    ) {
        let s = Scenario::new(
            constants(),
            vec![Waveguide::new(y, z, length, 0.005).unwrap()],
            vec![UserPosition::new(ux, uy, 0.0)],
        )
        .unwrap();
        let (back, activation) = Scenario::from_toml_str(&s.to_toml_string()).unwrap();
        prop_assert_eq!(back, s);
        prop_assert!(activation.is_none());
    }
}
