use semidyad::estimator::{preprocess, BandwidthChoice, FitOptions};
use semidyad::io::{gof_degrees, load_network, write_network, CovariateSource, InputSchema};
use semidyad::kernel::{KernelIndex, SmoothingPlan};
use semidyad::simulation::{
    generate_network, BandwidthPolicy, DgpSpec, McStudy, McTarget, McTask, Noise, Schedule,
};
use semidyad::weighted::renormalize_binary;
use semidyad::{fit, fit_weighted};

fn biweight(u: f64) -> f64 {
    if u.abs() < 1.0 {
        15.0 / 16.0 * (1.0 - u * u).powi(2)
    } else {
        0.0
    }
}

fn consistency(n: usize) -> DgpSpec {
    DgpSpec::new(
        n,
        Noise::standard_normal(),
        Schedule::Consistency { rho1: 0.0 },
    )
}

fn signed(bandwidth: BandwidthChoice<f64>) -> FitOptions<f64> {
    FitOptions {
        sign: Some(1),
        bandwidth,
        ..FitOptions::default()
    }
}

#[test]
fn indexed_density_matches_brute_force_on_large_network() {
    // 317 nodes give 100 172 ordered pairs
    let sim = generate_network(&consistency(317), 21).unwrap();
    let net = &sim.network;
    assert!(net.pairs() > 100_000);
    let (x, z) = (net.special_regressor(), net.covariates());
    let h = 0.6;
    let plan = SmoothingPlan::all_continuous(2, h).unwrap();
    let dens = KernelIndex::new(x, z, &plan)
        .unwrap()
        .densities(&plan)
        .unwrap();
    let mut worst: f64 = 0.0;
    for r in (0..x.len()).step_by(997) {
        let (mut num, mut den) = (0.0, 0.0);
        for s in 0..x.len() {
            let kz = biweight((z[(s, 0)] - z[(r, 0)]) / h) * biweight((z[(s, 1)] - z[(r, 1)]) / h);
            den += kz;
            num += kz * biweight((x[s] - x[r]) / h);
        }
        let brute = (num / (h * den)).max(1e-3);
        worst = worst.max((brute - dens[r]).abs() / brute);
    }
    assert!(worst < 1e-10, "relative error {worst:e}");
}

#[test]
fn selected_bandwidth_is_interior() {
    let sim = generate_network(&consistency(50), 2).unwrap();
    let f = fit(&sim.network, &signed(BandwidthChoice::Select(None))).unwrap();
    let sel = f.bandwidth_selection.unwrap();
    let first = sel.candidates.first().unwrap().bandwidth;
    let last = sel.candidates.last().unwrap().bandwidth;
    assert!(
        sel.bandwidth > first && sel.bandwidth < last,
        "h = {} on [{first}, {last}]",
        sel.bandwidth
    );
    // the selected candidate attains the smallest finite loss
    let min = sel
        .candidates
        .iter()
        .filter_map(|c| c.loss)
        .fold(f64::INFINITY, f64::min);
    assert_eq!(sel.loss, min);
}

#[test]
fn written_network_reloads_to_identical_fit() {
    let sim = generate_network(&consistency(25), 8).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let (edges, covariates) = write_network(dir.path(), &sim.network, "x1").unwrap();
    let schema = InputSchema {
        edges,
        covariates: CovariateSource::Pairwise { path: covariates },
        special_regressor: "x1".into(),
        discrete: Vec::new(),
        standardize: false,
        nodes: Some(25),
    };
    let back = load_network(&schema).unwrap();
    assert_eq!(back.edges(), sim.network.edges());
    assert_eq!(back.special_regressor(), sim.network.special_regressor());
    assert_eq!(back.covariates(), sim.network.covariates());
    let options = signed(BandwidthChoice::Select(None));
    let a = fit(&sim.network, &options).unwrap();
    let b = fit(&back, &options).unwrap();
    assert_eq!(a.alpha, b.alpha);
    assert_eq!(a.beta, b.beta);
    assert_eq!(a.eta, b.eta);
    assert_eq!(a.bandwidth, b.bandwidth);
    assert_eq!(a.sigma_eps2, b.sigma_eps2);
}

#[test]
fn fitted_degrees_beat_the_empty_predictor() {
    let sim = generate_network(&consistency(50), 4).unwrap();
    let options = signed(BandwidthChoice::Select(None));
    let f = fit(&sim.network, &options).unwrap();
    let (seen, _) = preprocess(&sim.network, &options).unwrap();
    let g = gof_degrees(&seen, &f).unwrap();
    println!(
        "out L2 {:.4} (zeros {:.4}), in L2 {:.4} (zeros {:.4})",
        g.l2_out, g.l2_out_zero, g.l2_in, g.l2_in_zero
    );
    assert!(g.l2_out < g.l2_out_zero);
    assert!(g.l2_in < g.l2_in_zero);
}

#[test]
fn two_level_weighted_fit_reduces_to_binary_fit() {
    let sim = generate_network(&consistency(30), 6).unwrap();
    let options = signed(BandwidthChoice::Fixed(1.0));
    let b = fit(&sim.network, &options).unwrap();
    let w = fit_weighted(&sim.network, Some(&[0.0, 1.0]), &options).unwrap();
    let (alpha, beta, eta, omega1) = renormalize_binary(&b.alpha, &b.beta, &b.eta);
    let worst = alpha
        .iter()
        .zip(&w.alpha)
        .chain(beta.iter().zip(&w.beta))
        .chain(eta.iter().zip(&w.eta))
        .chain(std::iter::once((&omega1, &w.omega[0])))
        .map(|(u, v)| (u - v).abs())
        .fold(0.0, f64::max);
    println!("max |weighted - renormalized binary| = {worst:e}");
    assert!(worst < 1e-10);
}

#[test]
fn monte_carlo_is_reproducible_across_worker_counts() {
    let study = |workers| McStudy {
        dgp: consistency(15),
        replications: 8,
        master_seed: 99,
        bandwidth: BandwidthPolicy::Fixed { bandwidth: 1.0 },
        task: McTask::Estimation {
            targets: vec![McTarget::Eta { index: 0 }, McTarget::Alpha { node: 7 }],
            level: 0.05,
            draws: 300,
            method: Default::default(),
            mode: Default::default(),
        },
        sign: Some(1),
        kernel: Default::default(),
        m_floor: None,
        workers,
    };
    let one = study(1).run().unwrap();
    let three = study(3).run().unwrap();
    assert!(one.same_results(&three));
    assert_eq!(one.replications, 8);
}
