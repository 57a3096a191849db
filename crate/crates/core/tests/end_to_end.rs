use policy_compress::envs::{river_swim, RiverSwimParams};
use policy_compress::guarantee::is_sigma_compression;
use policy_compress::instances::random_cmp;
use policy_compress::io::{load_report, save_report, ReportFile};
use policy_compress::psca::{compress, PscaConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn river_swim_report_reloads_and_reverifies() {
    let (cmp, _) = river_swim(&RiverSwimParams::default()).unwrap();
    let cfg = PscaConfig {
        max_k: 2,
        ..PscaConfig::default()
    };
    let report = compress(&cmp, 10.0, &cfg, 3).unwrap();
    let bound = report.final_bound();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("report.json");
    save_report(&ReportFile::new("river-swim", &cmp, report.clone()).unwrap(), &path).unwrap();
    let back = load_report(&path).unwrap();
    assert_eq!(back.report, report);
    let (stored, _) = back.cmp.to_model().unwrap();
    assert_eq!(stored, cmp);
    let cert = is_sigma_compression(&stored, &back.report.cover, bound + 1e-9).unwrap();
    assert!(cert.certified);
    assert_eq!(cert.evidence.cover_bound, bound);
}

#[test]
fn bound_trace_never_increases() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for seed in 0..3 {
        let cmp = random_cmp(&mut rng, 3, 2);
        let cfg = PscaConfig {
            max_k: 3,
            ..PscaConfig::default()
        };
        let report = compress(&cmp, 1.01, &cfg, seed).unwrap();
        for pair in report.cover_bound_trace.windows(2) {
            assert!(pair[1] <= pair[0] * 1.05, "{:?}", report.cover_bound_trace);
        }
    }
}
