//! The Case-2 procedure on a short Lorenz window, through the library API:
//! spectrum, splitting, strings, block, returns, close-up, shadowing check
//! and measure comparison.

use starflow::cocycle::build_chain;
use starflow::flow::{built_in, integrate, IntegrateOptions, ALPHA_MIN};
use starflow::measures::{default_basis, dm_distance, empirical_measure, periodic_measure, BoxBounds};
use starflow::shadow::{close_up, find_close_returns, independent_residual, verify_shadowing, CloseUpOptions, ReturnSearch};
use starflow::spectrum::{oseledec_splitting, qr_exponents, tangent_exponents, SplittingOptions};
use starflow::strings::{block_constants, member_flags, membership_fraction, pliss_select, LogProfile};

#[test]
fn lorenz_window_closes_into_a_shadowing_periodic_orbit() {
    let lorenz = built_in("lorenz").unwrap();
    let opts = IntegrateOptions::uniform(1e-10, 0.01);
    let warm = integrate(&lorenz, &[1.0, 1.0, 1.0], 20.0, &opts).unwrap();
    let orbit = integrate(&lorenz, warm.last().as_slice(), 800.0, &opts).unwrap();

    let chain = build_chain(&orbit, true, ALPHA_MIN).unwrap();
    let spectrum = qr_exponents(&chain).unwrap();
    let tangent = tangent_exponents(&orbit).unwrap().without_zero();
    assert_eq!(spectrum.count_negative(), 1);
    for (s, t) in spectrum.exponents.iter().zip(&tangent) {
        assert!((s - t).abs() < 0.1, "{:?} vs {tangent:?}", spectrum.exponents);
    }

    let split = oseledec_splitting(&chain, 1, &SplittingOptions::default()).unwrap();
    assert!(split.domination.pass);
    let (lo, hi) = split.converged_range().unwrap();
    let profile = LogProfile::from_splitting(&chain, &split, lo, hi - lo, 1);
    let segments = pliss_select(&profile, 0.3 * spectrum.gap(), 1.0).unwrap();
    assert!(!segments.is_empty());

    let fraction = |p: &_| membership_fraction(&chain, &split, lorenz.as_ref(), p, 200.0);
    let derivation = block_constants(&spectrum, None, 1.0, 0.9, 1024.0, fraction).unwrap();
    let params = derivation.upgraded_params();
    let flags = member_flags(&chain, &split, lorenz.as_ref(), &params, 200.0f64.max(params.t));
    assert!(flags.iter().any(|&f| f));

    let search = ReturnSearch { orbit: &orbit, profile: &profile, segments: &segments, member: &flags, params };
    let returns = find_close_returns(&search, 1.0);
    assert!(!returns.is_empty(), "no close return with gap below 1");
    assert!(returns.windows(2).all(|w| w[0].gap <= w[1].gap));

    let r = &returns[0];
    let guess = orbit.slice(r.start_index, r.end_index);
    let periodic = close_up(&guess, &CloseUpOptions::default()).unwrap();
    assert!(periodic.residual <= 1e-9);
    assert!(independent_residual(&periodic, 1e-12, 10.0).unwrap() < 1e-6);
    let report = verify_shadowing(&guess, &periodic, 0.2);
    assert!(report.pass, "{:?} {}", report.theta_prime_bounds, report.scaled_dist_max);
    // One contracting and one expanding normal multiplier.
    assert!(periodic.floquet_lognorms[0] < 0.0 && periodic.floquet_lognorms[1] > 0.0);

    let mu = empirical_measure(&orbit).unwrap();
    let mu_p = periodic_measure(&periodic).unwrap();
    let basis = default_basis(BoxBounds::lorenz(), 6, mu.points()).unwrap();
    let dm = dm_distance(&mu, &mu_p, &basis, 6).unwrap();
    assert!(dm.value >= 0.0 && dm.upper() < 1.0);
    assert_eq!(dm.tail_bound, 2f64.powi(-5));
}
