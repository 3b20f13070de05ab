use nykpca::analysis::{Decay, SpectrumSpec};
use nykpca::{fit_ekpca, fit_nystrom, KernelSpec};
use nykpca_harness::config::DataSource;
use nykpca_harness::experiment::{repetition_seed, run_on, sample_landmarks};
use nykpca_harness::results::{emit_rows, parse_rows};
use nykpca_harness::{ExperimentConfig, Method, SamplingConfig};

fn config(sampling: SamplingConfig) -> ExperimentConfig {
    ExperimentConfig {
        data: DataSource::Synthetic {
            spectrum: SpectrumSpec::new(Decay::Polynomial { alpha: 2.0, scale: 1.0 }, 400)
                .with_tolerance(nykpca::analysis::TailTolerance::RelativeToTailAt { ell: 12, rel: 0.1 }),
            n: 80,
            seed: None,
        },
        kernel: KernelSpec::gaussian(4.0).unwrap(),
        method: Method::Nystrom,
        sampling,
        m_list: vec![12, 25],
        ell_list: vec![1, 3, 7, 12],
        repetitions: 3,
        master_seed: 2024,
        output: "unused.csv".into(),
        timing: false,
        baseline: true,
        bench: None,
    }
}

#[test]
fn one_fit_serves_every_ell() {
    for sampling in [SamplingConfig::PlainUniform, SamplingConfig::Als { s: 1e-3, pilot_size: 20 }] {
        let cfg = config(sampling);
        let data = cfg.load_dataset().unwrap();
        let rows = run_on(&cfg, &data, &mut |_| Ok(())).unwrap();
        assert_eq!(rows.len(), 2 * 3 * 4 + 4);
        for r in rows.iter().filter(|r| r.method == "NYSTROM") {
            let seed = repetition_seed(cfg.master_seed, r.m_requested, r.repetition);
            assert_eq!(r.seed, seed);
            let lm = sample_landmarks(&cfg.sampling, &data, &cfg.kernel, r.m_requested, seed).unwrap();
            let refit = fit_nystrom(&data, &cfg.kernel, &lm, r.ell);
            match refit {
                Ok(model) => assert_eq!(r.reconstruction_error, Some(model.recon_error()), "{r:?}"),
                Err(e) => assert_eq!(r.status, e.to_string()),
            }
        }
        for r in rows.iter().filter(|r| r.method == "EKPCA") {
            let model = fit_ekpca(&data, &cfg.kernel, r.ell).unwrap();
            assert_eq!(r.reconstruction_error, Some(model.recon_error()));
        }
    }
}

#[test]
fn rows_are_deterministic_and_round_trip() {
    let cfg = config(SamplingConfig::PlainUniform);
    let data = cfg.load_dataset().unwrap();
    let a = run_on(&cfg, &data, &mut |_| Ok(())).unwrap();
    let b = run_on(&cfg, &data, &mut |_| Ok(())).unwrap();
    assert_eq!(a, b);
    assert_eq!(parse_rows(&emit_rows(&a)).unwrap(), a);
    assert!(a.iter().all(|r| r.reconstruction_error.unwrap() >= -1e-10));
}

#[test]
fn canonical_order() {
    let cfg = config(SamplingConfig::PlainUniform);
    let data = cfg.load_dataset().unwrap();
    let rows = run_on(&cfg, &data, &mut |_| Ok(())).unwrap();
    let keys: Vec<(usize, usize, usize)> =
        rows.iter().filter(|r| r.method == "NYSTROM").map(|r| (r.m_requested, r.repetition, r.ell)).collect();
    let mut sorted = keys.clone();
    sorted.sort();
    assert_eq!(keys, sorted);
    assert_eq!(rows.last().unwrap().method, "EKPCA");
}

#[test]
fn sink_errors_abort() {
    let cfg = config(SamplingConfig::PlainUniform);
    let data = cfg.load_dataset().unwrap();
    let mut seen = 0;
    let res = run_on(&cfg, &data, &mut |_| {
        seen += 1;
        if seen == 2 {
            Err(nykpca_harness::HarnessError::Config("disk full".into()))
        } else {
            Ok(())
        }
    });
    assert!(res.is_err());
    assert_eq!(seen, 2);
}
