use relgp_core::dists::{self, InputParams};
use relgp_core::ingest::{self, SynthConfig, SMALL_P_TRUTH};
use relgp_core::Error;

#[test]
fn write_then_load_is_bit_exact() {
    let tmp = tempfile::tempdir().unwrap();
    let ds = ingest::synth_study(5, 25, 15, &SynthConfig::small_p()).unwrap();
    let manifest = ingest::write_dataset(tmp.path(), &ds).unwrap();
    let back = ingest::load_dataset(&manifest).unwrap();
    assert_eq!(back, ds);
    assert_eq!(back.observation_counts().iter().map(|c| c.1).collect::<Vec<_>>(), vec![8, 4, 3, 4, 3, 4, 4, 4, 4, 4, 12, 4, 11, 4, 4]);
    let z = back.outputs();
    assert!(z.iter().zip(&ds.outputs_raw).all(|(a, b)| *a == b / 1000.0));
}

#[test]
fn missing_and_malformed_files_are_reported() {
    let tmp = tempfile::tempdir().unwrap();
    let ds = ingest::synth_study(5, 6, 3, &SynthConfig::small_p()).unwrap();
    let manifest = ingest::write_dataset(tmp.path(), &ds).unwrap();

    std::fs::write(tmp.path().join("outputs.csv"), "peak_accel_g\n2500\nnot-a-number\n").unwrap();
    let msg = ingest::load_dataset(&manifest).unwrap_err().to_string();
    assert!(msg.contains("not-a-number"), "{msg}");

    std::fs::write(tmp.path().join("outputs.csv"), "accel\n2500\n").unwrap();
    let msg = ingest::load_dataset(&manifest).unwrap_err().to_string();
    assert!(msg.contains("peak_accel_g"), "{msg}");

    std::fs::remove_file(tmp.path().join("design.csv")).unwrap();
    let err = ingest::load_dataset(&manifest).unwrap_err();
    assert!(matches!(err, Error::Dataset(_)));
    assert!(err.to_string().contains("design.csv"), "{err}");
}

#[test]
fn maximum_likelihood_recovers_generating_parameters_from_large_samples() {
    let mut c = SynthConfig::linear(2500.0, &[10.0, -20.0, 5.0], &[1.0, 50.0, -3.0], &[0.5, 4.0, 0.2]);
    for v in &mut c.variables {
        v.observations = 200_000;
    }
    let ds = ingest::synth_study(17, 10, 3, &c).unwrap();
    for (spec, v) in ds.variables.iter().zip(&c.variables) {
        let fit = dists::mle_fit(spec).unwrap().to_array();
        let truth = v.truth.to_array();
        for j in 0..2 {
            assert!((fit[j] - truth[j]).abs() < 0.01 * truth[j].abs(), "{}: {fit:?} vs {truth:?}", spec.name());
        }
    }
}

#[test]
fn affine_simulator_has_closed_form_exceedance() {
    let mut c = SynthConfig::linear(2700.0, &[60.0, -80.0, 30.0], &[1.0, 50.0, -3.0], &[0.5, 4.0, 0.2]);
    c.z_crit = 2.9;
    // Threshold 2900 sits 2 standard deviations (sqrt(60^2 + 80^2 + 30^2) = 104.4) above the intercept.
    let exact = ingest::linear_exceedance(&c);
    let t = 200.0 / (60f64.powi(2) + 80f64.powi(2) + 30f64.powi(2)).sqrt();
    assert!((exact - 0.5 * statrs::function::erf::erfc(t / 2f64.sqrt())).abs() < 1e-15);
    let (p, se) = ingest::direct_mc_exceedance(&c, 2_000_000, 3).unwrap();
    assert!((p - exact).abs() < 4.0 * se, "{p} vs {exact} (se {se})");
}

#[test]
fn simulator_is_affine_plus_fixed_nonlinearity() {
    let c = SynthConfig::small_p();
    let means: Vec<f64> = c.variables.iter().map(|v| v.truth.mean()).collect();
    assert_eq!(ingest::synth_simulator(&means, &c), c.intercept);
    let mut s = means.clone();
    let sd = c.variables[0].truth.std_dev();
    s[0] += sd;
    let expected = c.intercept + c.variables[0].coefficient;
    assert!((ingest::synth_simulator(&s, &c) - expected).abs() < 1e-9);
    let mut s = means;
    s[1] += c.variables[1].truth.std_dev();
    let expected = c.intercept + c.variables[1].coefficient + c.wave * 1f64.sin();
    assert!((ingest::synth_simulator(&s, &c) - expected).abs() < 1e-9);
}

#[test]
fn small_p_preset_has_the_reference_study_shape() {
    let c = SynthConfig::small_p();
    assert_eq!(c.variables.len(), 15);
    assert_eq!(c.design_rows, 25);
    assert_eq!(c.z_crit, 3.0);
    let weibulls = c.truths().iter().filter(|t| matches!(t, InputParams::Weibull { .. })).count();
    assert_eq!(weibulls, 10);
    assert_eq!(c.p_true, Some(SMALL_P_TRUTH.0));
}

#[test]
#[ignore = "10^8 simulator evaluations; run explicitly to re-derive the frozen truth"]
fn frozen_small_p_truth_reproduces() {
    let (p, se) = ingest::direct_mc_exceedance(&SynthConfig::small_p(), 100_000_000, 1).unwrap();
    assert_eq!((p, se), SMALL_P_TRUTH);
}

#[test]
fn small_p_truth_is_consistent_with_a_fresh_estimate() {
    let (p, se) = ingest::direct_mc_exceedance(&SynthConfig::small_p(), 4_000_000, 77).unwrap();
    let combined = (se * se + SMALL_P_TRUTH.1 * SMALL_P_TRUTH.1).sqrt();
    assert!((p - SMALL_P_TRUTH.0).abs() < 4.0 * combined, "{p} vs {}", SMALL_P_TRUTH.0);
}
