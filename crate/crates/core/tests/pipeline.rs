use altrec::bench::add_gaussian_noise;
use altrec::geometry::{sample_mesh_uniform, Point3, PointCloud};
use altrec::metrics;
use altrec::pipeline::{
    run_pipeline, run_pipeline_from, select_initial_surface, GroundTruth, LambdaMode, PipelineConfig,
};
use altrec::shapes::icosphere;
use altrec::Error;

fn small_config() -> PipelineConfig {
    PipelineConfig {
        d_min: 5,
        d_max: 6,
        d_sharp: 6,
        ..Default::default()
    }
}

fn noisy_sphere(n: usize, seed: u64) -> (PointCloud, GroundTruth) {
    let mesh = icosphere(5, 0.4, Point3::new(0.5, 0.5, 0.5));
    let clean = sample_mesh_uniform(&mesh, n, seed).unwrap();
    let gt = sample_mesh_uniform(&mesh, 50_000, 99).unwrap();
    (add_gaussian_noise(&clean, 0.01, seed).unwrap(), GroundTruth::Dense(gt))
}

#[test]
fn small_run_satisfies_loop_invariants() {
    let (noisy, gt) = noisy_sphere(5_000, 3);
    let config = small_config();
    let out = run_pipeline(&noisy, &config, Some(&gt)).unwrap();
    let report = &out.report;

    assert_eq!(out.denoised.len(), noisy.len());
    assert!(out.denoised.has_normals());
    assert_eq!(report.records.len(), config.outer_iters);
    assert!((5..=6).contains(&report.d0));

    let mut projected_depth = report.d0;
    for (k, rec) in report.records.iter().enumerate() {
        assert_eq!(rec.iter, k + 1);
        assert_eq!(rec.depth, report.schedule[k]);
        assert_eq!(rec.projection_depth, projected_depth);
        assert!(rec.mean_disp.is_finite());
        if rec.projection_depth >= config.d_sharp {
            assert!(rec.lambda_min > 0.1 && rec.lambda_max <= 1.0);
            assert!(rec.threshold.is_some());
        } else {
            assert_eq!((rec.lambda_min, rec.lambda_max), (0.5, 0.5));
            assert!(rec.threshold.is_none());
        }
        projected_depth = rec.depth;
    }
    assert!(report.max_relative_residual() <= 1e-6);

    // Report RMSD values come straight from the metrics module.
    let dense = match &gt {
        GroundTruth::Dense(c) => c,
        GroundTruth::Mesh(_) => unreachable!(),
    };
    assert_eq!(report.rmsd_input, Some(metrics::rmsd(&noisy, dense).unwrap()));
    assert_eq!(report.records.last().unwrap().rmsd, Some(metrics::rmsd(&out.denoised, dense).unwrap()));
    assert!(report.records.last().unwrap().rmsd.unwrap() < report.rmsd_input.unwrap());
}

#[test]
fn reruns_are_bit_identical() {
    let (noisy, _) = noisy_sphere(3_000, 4);
    let config = PipelineConfig {
        outer_iters: 2,
        ..small_config()
    };
    let a = run_pipeline(&noisy, &config, None).unwrap();
    let b = run_pipeline(&noisy, &config, None).unwrap();
    assert_eq!(a.denoised, b.denoised);
    assert_eq!(a.mesh, b.mesh);
    assert_eq!(a.report.without_timings(), b.report.without_timings());
}

#[test]
fn outer_iteration_count_contract() {
    let (noisy, _) = noisy_sphere(3_000, 5);
    let zero = PipelineConfig {
        outer_iters: 0,
        ..small_config()
    };
    let err = run_pipeline(&noisy, &zero, None).unwrap_err();
    assert!(matches!(err.error, Error::InvalidParameter(_)));

    let one = PipelineConfig {
        outer_iters: 1,
        ..small_config()
    };
    let out = run_pipeline(&noisy, &one, None).unwrap();
    assert_eq!(out.report.records.len(), 1);
    assert_eq!(out.report.schedule, vec![out.report.d0]);
}

#[test]
fn shared_initial_surface_matches_full_run() {
    let (noisy, _) = noisy_sphere(3_000, 6);
    let config = PipelineConfig {
        outer_iters: 2,
        lambda_mode: LambdaMode::Fixed { c: 0.11, sigma: 0.05 },
        ..small_config()
    };
    let initial = select_initial_surface(&noisy, &config).unwrap();
    let from = run_pipeline_from(&noisy, &config, None, &initial).unwrap();
    let full = run_pipeline(&noisy, &config, None).unwrap();
    assert_eq!(from.denoised, full.denoised);
    assert_eq!(from.report.without_timings(), full.report.without_timings());

    let fewer = PointCloud::new(noisy.points()[..100].to_vec()).unwrap();
    let err = run_pipeline_from(&fewer, &config, None, &initial).unwrap_err();
    assert!(matches!(err.error, Error::LengthMismatch { .. }));
}
