use stabl::diagnostics::{
    angle_vs_epsilon, converged_pca_coder, excitation_snapshots, pca_policy_sweep,
    samples_to_detect_instability, write_angle_csv, write_sweep_csv, AnglePoint, SnapshotProtocol,
};
use stabl::env::make_toy2d;
use stabl::linalg::DenseMatrix;
use stabl::manifold::{dense_unstable_basis, LinearCoder, DEFAULT_MARGIN};
use stabl::Error;

const S5: f64 = 2.236_067_977_499_79;

fn grid(n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n)
        .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
        .collect()
}

#[test]
fn zero_gain_reproduces_the_open_loop_spectrum() {
    let env = make_toy2d(0.1).unwrap();
    let pca = converged_pca_coder(&env, &SnapshotProtocol::default(), 5000).unwrap();
    let sweep = pca_policy_sweep(&env, &pca, &[0.0], &[1e-3, 1e-3], 10).unwrap();
    let p = &sweep.points[0];
    assert_eq!(p.full_eigenvalues[0].norm(), 1.1);
    assert_eq!(p.full_eigenvalues[1].norm(), 0.9);
    let v = pca.basis();
    // Projected model vᵀ A v for A = [[0.9, 0], [0.1, 1.1]].
    let expected = 0.9 * v[(0, 0)].powi(2) + 0.1 * v[(0, 0)] * v[(1, 0)] + 1.1 * v[(1, 0)].powi(2);
    assert!((p.latent_eigenvalue.re - expected).abs() < 1e-14);
    assert_eq!(p.log_magnitudes.len(), 11);
}

#[test]
fn pca_coder_admits_no_stabilizing_gain() {
    let env = make_toy2d(0.1).unwrap();
    let pca = converged_pca_coder(&env, &SnapshotProtocol::default(), 20_000).unwrap();
    let psis = grid(400, -10.0, 10.0);
    let sweep = pca_policy_sweep(&env, &pca, &psis, &[1e-3, 1e-3], 100).unwrap();
    assert!(sweep.stabilizing().is_empty());
    for p in &sweep.points {
        assert!(
            p.full_eigenvalues.iter().any(|l| l.norm() >= 1.0),
            "psi {}",
            p.psi
        );
    }
}

#[test]
fn unstable_manifold_coder_decouples_and_stabilizes() {
    let env = make_toy2d(0.1).unwrap();
    let left = dense_unstable_basis(&env, env.xbar(), env.ubar(), DEFAULT_MARGIN).unwrap();
    let w = left.w.clone();
    assert!((w[(0, 0)] - 1.0 / S5).abs() < 1e-14 && (w[(1, 0)] - 2.0 / S5).abs() < 1e-14);
    let coder = LinearCoder::new(w, env.xbar().to_vec(), env.ubar().to_vec()).unwrap();
    let psis = grid(400, -10.0, 10.0);
    let sweep = pca_policy_sweep(&env, &coder, &psis, &[1e-3, 1e-3], 200).unwrap();
    for p in &sweep.points {
        let latent = 1.1 + p.psi / S5;
        assert!((p.latent_eigenvalue.re - latent).abs() < 1e-12);
        let mut want = [0.9, latent.abs()];
        let mut got = [p.full_eigenvalues[0].norm(), p.full_eigenvalues[1].norm()];
        want.sort_by(f64::total_cmp);
        got.sort_by(f64::total_cmp);
        assert!((want[0] - got[0]).abs() < 1e-10 && (want[1] - got[1]).abs() < 1e-10);
    }
    let stabilizing = sweep.stabilizing();
    assert!(!stabilizing.is_empty());
    for psi in stabilizing {
        assert!(psi > -2.1 * S5 && psi < -0.1 * S5);
    }
    let p = &pca_policy_sweep(&env, &coder, &[-0.6 * S5], &[1e-3, 1e-3], 200)
        .unwrap()
        .points[0];
    assert!((p.full_eigenvalues[0].norm() - 0.9).abs() < 1e-12);
    // The stabilized trajectory decays.
    assert!(p.log_magnitudes.last().unwrap() < &(p.log_magnitudes[0] - 5.0));
}

#[test]
fn sweep_rejects_other_shapes() {
    let env = make_toy2d(0.1).unwrap();
    let coder = LinearCoder::identity(env.xbar().to_vec(), env.ubar().to_vec()).unwrap();
    assert!(pca_policy_sweep(&env, &coder, &[0.0], &[0.0, 0.0], 1).is_err());
}

#[test]
fn snapshots_restart_after_blowup() {
    let env = make_toy2d(1.0).unwrap();
    let protocol = SnapshotProtocol {
        threshold: Some(1e-2),
        ..SnapshotProtocol::default()
    };
    let snaps = excitation_snapshots(&env, &protocol, 2000).unwrap();
    assert_eq!(snaps.len(), 2000);
    assert!(snaps.iter().all(|s| s.iter().all(|v| v.abs() <= 1e-2)));
    let restarts = snaps
        .iter()
        .skip(1)
        .filter(|s| s.iter().all(|v| *v == 0.0))
        .count();
    assert!(restarts > 0);
    assert_eq!(snaps[0], vec![0.0, 0.0]);
}

#[test]
fn detection_count_examples() {
    let protocol = SnapshotProtocol::default();
    let counts: Vec<usize> = [0.01, 0.1, 1.0, 10.0]
        .iter()
        .map(|&e| {
            samples_to_detect_instability(&make_toy2d(e).unwrap(), &protocol, 20_000).unwrap()
        })
        .collect();
    assert!(counts.windows(2).all(|w| w[0] >= w[1]), "{counts:?}");
    assert!(counts[0] >= 5 * counts[3], "{counts:?}");

    // Snapshot 1 is x̄ and snapshot 2 moves only the stable state; the
    // coupling shows up from the third snapshot on.
    let strong = samples_to_detect_instability(&make_toy2d(1e4).unwrap(), &protocol, 20_000);
    assert_eq!(strong.unwrap(), 3);
    for budget in [1, 2] {
        let weak = samples_to_detect_instability(&make_toy2d(0.01).unwrap(), &protocol, budget);
        assert!(matches!(weak, Err(Error::NotDetected { budget: b }) if b == budget));
    }
}

#[test]
fn detection_is_deterministic_per_seed() {
    let env = make_toy2d(0.1).unwrap();
    for seed in 0..4 {
        let p = SnapshotProtocol {
            seed,
            ..SnapshotProtocol::default()
        };
        let a = samples_to_detect_instability(&env, &p, 20_000).unwrap();
        let b = samples_to_detect_instability(&env, &p, 20_000).unwrap();
        assert_eq!(a, b);
    }
}

#[test]
fn angles_grow_with_coupling() {
    let points = angle_vs_epsilon(
        &[0.01, 0.1, 1.0, 10.0],
        &SnapshotProtocol::default(),
        20_000,
    )
    .unwrap();
    for p in &points {
        assert!(p.angle > 0.0 && p.angle < std::f64::consts::FRAC_PI_2);
        assert!(p.samples_to_detect.is_some());
    }
    assert!(points.windows(2).all(|w| w[0].angle < w[1].angle));
    // PCA aligns with the unstable state (0, 1); the left eigenvector at
    // ε = 0.1 is ∝ (1, 2), at angle atan(1/2).
    assert!((points[1].angle - 0.5f64.atan()).abs() < 1e-4);
}

#[test]
fn csv_layouts() {
    let env = make_toy2d(0.1).unwrap();
    let coder = LinearCoder::new(
        DenseMatrix::from_rows(&[&[1.0 / S5], &[2.0 / S5]]),
        env.xbar().to_vec(),
        env.ubar().to_vec(),
    )
    .unwrap();
    let sweep = pca_policy_sweep(&env, &coder, &[0.0, -S5], &[1e-3, 1e-3], 3).unwrap();
    let mut buf = Vec::new();
    write_sweep_csv(&sweep, &mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "psi,lat_eig_mod,full_eig1_mod,full_eig2_mod");
    assert_eq!(lines.len(), 3);
    let row: Vec<f64> = lines[1].split(',').map(|f| f.parse().unwrap()).collect();
    assert_eq!(row[0], 0.0);
    assert!((row[1] - 1.1).abs() < 1e-12 && (row[2] - 1.1).abs() < 1e-12);

    let points = [
        AnglePoint {
            epsilon: 0.1,
            angle: 0.5,
            samples_to_detect: Some(12),
        },
        AnglePoint {
            epsilon: 1.0,
            angle: 1.0,
            samples_to_detect: None,
        },
    ];
    let mut buf = Vec::new();
    write_angle_csv(&points, &mut buf).unwrap();
    assert_eq!(
        String::from_utf8(buf).unwrap(),
        "epsilon,angle_rad,samples_to_detect\n0.1,0.5,12\n1,1,\n"
    );
}
