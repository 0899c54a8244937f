use std::path::{Path, PathBuf};

use semidyad::estimator::{preprocess, BandwidthChoice, FitOptions, IsolatedPolicy, ModelFit};
use semidyad::inference::{
    ci_scalar, recover_support, test_heterogeneity, test_sparse, Block, CiMethod, Contrast,
    CovMode, CovarianceModel, DrawSet, Interval, TestReport,
};
use semidyad::io::{
    fmt_f64, gof_degrees, load_network, write_csv, write_json, write_network, CovariateSource,
};
use semidyad::kernel::{geometric_grid, KernelFamily};
use semidyad::network::DirectedNetwork;
use semidyad::simulation::{generate_network, DgpSpec, McStudy, Noise, Schedule};
use semidyad::weighted::{
    fit_weighted, weighted_intervals, WeightedCovariance, WeightedTarget, XiCovarianceForm,
};
use semidyad::{Error, Result};
use serde::Serialize;

use crate::args::{
    CiCmd, Cli, Command, CovArg, DataArgs, FitCmd, FitFlags, HeteroCmd, McCmd, MethodArg,
    SimulateArgs, SupportCmd, TestCmd, WeightedCmd, WhichArg,
};
use crate::config::RunConfig;

struct Ctx {
    cfg: RunConfig,
    out: PathBuf,
}

impl Ctx {
    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }
}

pub fn run(cli: Cli) -> Result<()> {
    let mut cfg = RunConfig::load(cli.config.as_deref())?;
    if cli.seed.is_some() {
        cfg.seed = cli.seed;
    }
    let out = cli
        .output_dir
        .clone()
        .or_else(|| cfg.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&out)?;
    let mut ctx = Ctx { cfg, out };
    match cli.command {
        Command::Simulate(a) => simulate(&ctx, &a),
        Command::Fit(a) => fit_cmd(&mut ctx, &a),
        Command::TestSparse(a) => sparse_cmd(&mut ctx, &a),
        Command::RecoverSupport(a) => support_cmd(&mut ctx, &a),
        Command::TestHeterogeneity(a) => hetero_cmd(&mut ctx, &a),
        Command::Ci(a) => ci_cmd(&mut ctx, &a),
        Command::SelectBandwidth(a) => bandwidth_cmd(&mut ctx, &a),
        Command::Gof(a) => gof_cmd(&mut ctx, &a),
        Command::Montecarlo(a) => mc_cmd(&ctx, &a),
        Command::FitWeighted(a) => weighted_cmd(&mut ctx, &a),
    }
}

fn sd(x: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    (x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)).sqrt()
}

/// Loads the network and assembles fit options from the merged configuration.
fn prepare(
    ctx: &mut Ctx,
    data: &DataArgs,
    flags: &FitFlags,
) -> Result<(DirectedNetwork<f64>, FitOptions<f64>)> {
    ctx.cfg.merge_data(data);
    ctx.cfg.merge_fit(flags);
    let cfg = &ctx.cfg;
    let schema = cfg.schema(&data.construct)?;
    let net = load_network(&schema)?;
    let mut options = FitOptions::<f64> {
        sign: cfg.sign,
        isolated: if cfg.data.drop_isolated.unwrap_or(false) {
            IsolatedPolicy::Drop
        } else {
            IsolatedPolicy::Error
        },
        // node attributes are standardized before pair construction
        standardize: matches!(schema.covariates, CovariateSource::Pairwise { .. })
            && cfg.standardize(),
        ..FitOptions::default()
    };
    if let Some(s) = options.sign {
        if s != 1 && s != -1 {
            return Err(Error::InvalidConfig(format!(
                "sign must be +1 or -1, got {s}"
            )));
        }
    }
    if let Some(b) = flags.sign_bins {
        options.sign_bins = b;
    }
    if let Some(t) = flags.tau_min {
        options.tau_min = t;
    }
    options.kernel = match cfg.kernel.as_deref() {
        None | Some("bw2") => KernelFamily::Biweight2,
        Some("bw4") => KernelFamily::Biweight4,
        Some(k) => {
            return Err(Error::InvalidConfig(format!(
                "unknown kernel `{k}`, expected bw2 or bw4"
            )))
        }
    };
    if let Some(m) = cfg.m_floor {
        if !(m > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "m_floor must be positive, got {m}"
            )));
        }
        options.m_floor = m;
    }
    options.bandwidth = match (cfg.bandwidth, &cfg.grid) {
        (Some(h), _) => BandwidthChoice::Fixed(h),
        (None, Some(g)) => {
            if !(g.lo > 0.0 && g.hi >= g.lo && g.points >= 1) {
                return Err(Error::InvalidConfig(
                    "grid needs 0 < lo <= hi and points >= 1".into(),
                ));
            }
            let (seen, _) = preprocess(&net, &options)?;
            BandwidthChoice::Select(Some(geometric_grid(
                sd(seen.special_regressor()),
                g.lo,
                g.hi,
                g.points,
            )))
        }
        (None, None) => BandwidthChoice::Select(None),
    };
    Ok((net, options))
}

fn cov_mode(c: Option<CovArg>) -> CovMode {
    match c {
        Some(CovArg::Heteroskedastic) => CovMode::Heteroskedastic,
        _ => CovMode::Homoskedastic,
    }
}

fn method(m: MethodArg) -> CiMethod {
    match m {
        MethodArg::Resampled => CiMethod::Resampled,
        MethodArg::ExactNormal => CiMethod::ExactNormal,
    }
}

fn blocks(w: WhichArg) -> Vec<Block> {
    match w {
        WhichArg::Alpha => vec![Block::Alpha],
        WhichArg::Beta => vec![Block::Beta],
        WhichArg::Both => vec![Block::Alpha, Block::Beta],
    }
}

fn block_name(b: Block) -> &'static str {
    match b {
        Block::Alpha => "alpha",
        Block::Beta => "beta",
    }
}

fn write_fit(ctx: &Ctx, fit: &ModelFit<f64>) -> Result<()> {
    write_json(&ctx.path("fit.json"), fit)?;
    let rows: Vec<Vec<String>> = (0..fit.n)
        .map(|i| {
            vec![
                (i + 1).to_string(),
                fit.labels[i].clone(),
                fmt_f64(fit.alpha[i]),
                fmt_f64(fit.beta[i]),
            ]
        })
        .collect();
    write_csv(
        &ctx.path("params.csv"),
        &["node", "label", "alpha", "beta"],
        &rows,
    )?;
    let rows: Vec<Vec<String>> = fit
        .covariate_names
        .iter()
        .zip(&fit.eta)
        .map(|(name, &e)| vec![name.clone(), fmt_f64(e)])
        .collect();
    write_csv(&ctx.path("eta.csv"), &["covariate", "eta"], &rows)
}

fn fit_cmd(ctx: &mut Ctx, a: &FitCmd) -> Result<()> {
    let (net, options) = prepare(ctx, &a.data, &a.fit)?;
    let fit = semidyad::fit(&net, &options)?;
    write_fit(ctx, &fit)
}

fn covariance(
    ctx: &mut Ctx,
    fit: &ModelFit<f64>,
    a: &crate::args::InferenceFlags,
) -> Result<(CovarianceModel<f64>, f64)> {
    ctx.cfg.merge_inference(a);
    let level = ctx.cfg.level()?;
    let cov = CovarianceModel::new(fit, cov_mode(a.cov), ctx.cfg.draws()?, ctx.cfg.seed())?;
    Ok((cov, level))
}

#[derive(Serialize)]
struct BlockTest {
    block: Block,
    report: TestReport,
}

fn sparse_cmd(ctx: &mut Ctx, a: &TestCmd) -> Result<()> {
    let (net, options) = prepare(ctx, &a.data, &a.fit)?;
    let fit = semidyad::fit(&net, &options)?;
    let (cov, level) = covariance(ctx, &fit, &a.inference)?;
    let draws = DrawSet::theta_only(&cov);
    let tests = blocks(a.which)
        .into_iter()
        .map(|b| {
            Ok(BlockTest {
                block: b,
                report: test_sparse(&fit, &cov, Some(&draws), b, level)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    write_json(&ctx.path("test_sparse.json"), &tests)
}

#[derive(Serialize)]
struct SupportOut {
    threshold_t: f64,
    mode: CovMode,
    blocks: Vec<SupportBlock>,
}

#[derive(Serialize)]
struct SupportBlock {
    block: Block,
    /// 1-based node positions.
    nodes: Vec<usize>,
    labels: Vec<String>,
}

fn support_cmd(ctx: &mut Ctx, a: &SupportCmd) -> Result<()> {
    let (net, options) = prepare(ctx, &a.data, &a.fit)?;
    let fit = semidyad::fit(&net, &options)?;
    if a.threshold_t.is_some() {
        ctx.cfg.threshold_t = a.threshold_t;
    }
    let t = ctx.cfg.threshold_t()?;
    let (cov, _) = covariance(ctx, &fit, &a.inference)?;
    let zeta = cov.zeta();
    let mut rows = Vec::new();
    let mut out = Vec::new();
    for b in blocks(a.which) {
        let s = recover_support(&fit, &zeta, t, b);
        for &i in &s {
            rows.push(vec![
                block_name(b).to_string(),
                (i + 1).to_string(),
                fit.labels[i].clone(),
            ]);
        }
        out.push(SupportBlock {
            block: b,
            labels: s.iter().map(|&i| fit.labels[i].clone()).collect(),
            nodes: s.iter().map(|&i| i + 1).collect(),
        });
    }
    write_json(
        &ctx.path("support.json"),
        &SupportOut {
            threshold_t: t,
            mode: cov.mode,
            blocks: out,
        },
    )?;
    write_csv(&ctx.path("support.csv"), &["block", "node", "label"], &rows)
}

fn hetero_cmd(ctx: &mut Ctx, a: &HeteroCmd) -> Result<()> {
    let (net, options) = prepare(ctx, &a.data, &a.fit)?;
    let fit = semidyad::fit(&net, &options)?;
    if a.m_tilde.is_some() {
        ctx.cfg.m_tilde = a.m_tilde;
    }
    let m_tilde = ctx.cfg.m_tilde.unwrap_or(0);
    let (cov, level) = covariance(ctx, &fit, &a.inference)?;
    let draws = DrawSet::theta_only(&cov);
    let mut tests = Vec::new();
    for b in blocks(a.which) {
        let group: Vec<usize> = if a.group.is_empty() {
            b.free_nodes(fit.n).collect()
        } else {
            a.group
                .iter()
                .map(|&g| {
                    g.checked_sub(1)
                        .ok_or_else(|| Error::InvalidConfig("group positions are 1-based".into()))
                })
                .collect::<Result<_>>()?
        };
        tests.push(BlockTest {
            block: b,
            report: test_heterogeneity(
                &fit,
                &cov,
                Some(&draws),
                b,
                &group,
                m_tilde,
                level,
                ctx.cfg.seed(),
            )?,
        });
    }
    write_json(&ctx.path("test_heterogeneity.json"), &tests)
}

/// `alpha:K`, `beta:K`, `eta:K`, `alpha-diff:I:J`, `beta-diff:I:J`, all 1-based.
fn parse_target(s: &str, n: usize, p: usize) -> Result<Contrast> {
    let bad = |why: &str| Error::InvalidConfig(format!("target `{s}`: {why}"));
    let parts: Vec<&str> = s.split(':').collect();
    let idx = |k: &str, len: usize| -> Result<usize> {
        let v: usize = k
            .parse()
            .map_err(|_| bad("index is not a positive integer"))?;
        if v == 0 || v > len {
            return Err(bad("index out of range"));
        }
        Ok(v - 1)
    };
    match parts.as_slice() {
        ["alpha", k] => Ok(Contrast::alpha(idx(k, n)?)),
        ["beta", k] => Ok(Contrast::beta(n, idx(k, n)?)),
        ["eta", k] => Ok(Contrast::eta(idx(k, p)?)),
        ["alpha-diff", i, j] => Ok(Contrast::difference(
            Block::Alpha,
            n,
            idx(i, n)?,
            idx(j, n)?,
        )),
        ["beta-diff", i, j] => Ok(Contrast::difference(Block::Beta, n, idx(i, n)?, idx(j, n)?)),
        _ => Err(bad(
            "expected alpha:K, beta:K, eta:K, alpha-diff:I:J or beta-diff:I:J",
        )),
    }
}

fn interval_rows(v: &[Interval]) -> Vec<Vec<String>> {
    v.iter()
        .map(|c| {
            vec![
                c.label.clone(),
                fmt_f64(c.estimate),
                fmt_f64(c.lower),
                fmt_f64(c.upper),
                fmt_f64(c.half_width),
                fmt_f64(c.level),
            ]
        })
        .collect()
}

const INTERVAL_HEADER: [&str; 6] = ["label", "estimate", "lower", "upper", "half_width", "level"];

fn ci_cmd(ctx: &mut Ctx, a: &CiCmd) -> Result<()> {
    let (net, options) = prepare(ctx, &a.data, &a.fit)?;
    let fit = semidyad::fit(&net, &options)?;
    let (cov, level) = covariance(ctx, &fit, &a.inference)?;
    let n = fit.n;
    let contrasts: Vec<Contrast> = if a.targets.is_empty() {
        (0..n)
            .map(Contrast::alpha)
            .chain((0..n).map(|j| Contrast::beta(n, j)))
            .chain((0..fit.eta.len()).map(Contrast::eta))
            .collect()
    } else {
        a.targets
            .iter()
            .map(|t| parse_target(t, n, fit.eta.len()))
            .collect::<Result<_>>()?
    };
    let m = method(a.method);
    let draws = (m == CiMethod::Resampled).then(|| DrawSet::new(&cov));
    let cis = contrasts
        .iter()
        .map(|c| ci_scalar(&fit, &cov, draws.as_ref(), c, level, m))
        .collect::<Result<Vec<_>>>()?;
    write_json(&ctx.path("intervals.json"), &cis)?;
    write_csv(
        &ctx.path("intervals.csv"),
        &INTERVAL_HEADER,
        &interval_rows(&cis),
    )
}

fn bandwidth_cmd(ctx: &mut Ctx, a: &FitCmd) -> Result<()> {
    if a.fit.bandwidth.is_some() {
        return Err(Error::InvalidConfig(
            "select-bandwidth does not take --bandwidth".into(),
        ));
    }
    ctx.cfg.bandwidth = None;
    let (net, options) = prepare(ctx, &a.data, &a.fit)?;
    let fit = semidyad::fit(&net, &options)?;
    let sel = fit
        .bandwidth_selection
        .as_ref()
        .ok_or_else(|| Error::InvalidConfig("bandwidth was fixed, nothing was selected".into()))?;
    write_json(&ctx.path("bandwidth.json"), sel)?;
    let rows: Vec<Vec<String>> = sel
        .candidates
        .iter()
        .map(|c| {
            vec![
                fmt_f64(c.bandwidth),
                c.loss.map(fmt_f64).unwrap_or_default(),
            ]
        })
        .collect();
    write_csv(
        &ctx.path("bandwidth_losses.csv"),
        &["bandwidth", "loss"],
        &rows,
    )
}

fn gof_cmd(ctx: &mut Ctx, a: &FitCmd) -> Result<()> {
    let (net, options) = prepare(ctx, &a.data, &a.fit)?;
    let fit = semidyad::fit(&net, &options)?;
    let (seen, _) = preprocess(&net, &options)?;
    let report = gof_degrees(&seen, &fit)?;
    write_json(&ctx.path("gof.json"), &report)?;
    let rows: Vec<Vec<String>> = report
        .rows
        .iter()
        .map(|r| {
            vec![
                r.node.clone(),
                fmt_f64(r.out_observed),
                fmt_f64(r.out_fitted),
                fmt_f64(r.in_observed),
                fmt_f64(r.in_fitted),
            ]
        })
        .collect();
    write_csv(
        &ctx.path("gof.csv"),
        &[
            "node",
            "out_observed",
            "out_fitted",
            "in_observed",
            "in_fitted",
        ],
        &rows,
    )
}

fn weighted_cmd(ctx: &mut Ctx, a: &WeightedCmd) -> Result<()> {
    let (net, options) = prepare(ctx, &a.data, &a.fit)?;
    if !a.weighted_levels.is_empty() {
        ctx.cfg.weighted_levels = Some(a.weighted_levels.clone());
    }
    let levels = ctx.cfg.weighted_levels.clone().ok_or_else(|| {
        Error::InvalidConfig("declare the edge levels with --weighted-levels".into())
    })?;
    let fit = fit_weighted(&net, Some(&levels), &options)?;
    ctx.cfg.merge_inference(&a.inference);
    let level = ctx.cfg.level()?;
    let cov = WeightedCovariance::new(
        &fit,
        XiCovarianceForm::default(),
        ctx.cfg.draws()?,
        ctx.cfg.seed(),
    )?;
    let n = fit.n;
    let targets: Vec<WeightedTarget> = (0..n)
        .map(WeightedTarget::Alpha)
        .chain((0..n).map(WeightedTarget::Beta))
        .chain((0..fit.omega.len()).map(WeightedTarget::Omega))
        .chain((0..fit.eta.len()).map(WeightedTarget::Eta))
        .collect();
    let cis = weighted_intervals(&fit, &cov, &targets, level, method(a.method))?;
    write_json(&ctx.path("weighted_fit.json"), &fit)?;
    write_csv(
        &ctx.path("weighted_intervals.csv"),
        &INTERVAL_HEADER,
        &interval_rows(&cis),
    )
}

fn parse_noise(name: &str, param: Option<f64>) -> Result<Noise> {
    Ok(match name {
        "normal" => Noise::Normal {
            mean: 0.0,
            var: param.unwrap_or(1.0),
        },
        "logistic" => Noise::logistic(param.unwrap_or(1.0)),
        "mnorm1" => Noise::mnorm1(),
        "mnorm2" => Noise::mnorm2(),
        "hetero-uniform" => Noise::HeteroUniform,
        _ => return Err(Error::InvalidConfig(format!("unknown noise `{name}`"))),
    })
}

fn parse_schedule(name: &str, knob: f64) -> Result<Schedule> {
    Ok(match name {
        "consistency" => Schedule::Consistency { rho1: knob },
        "sparse" => Schedule::Sparse { rho2: knob },
        "support" => Schedule::Support,
        "heterogeneity" => Schedule::Heterogeneity { rho3: knob },
        "weighted" => Schedule::weighted_default(),
        _ => return Err(Error::InvalidConfig(format!("unknown schedule `{name}`"))),
    })
}

fn read_toml<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)?;
    toml::from_str(&text).map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))
}

fn simulate(ctx: &Ctx, a: &SimulateArgs) -> Result<()> {
    let spec: DgpSpec = match &a.dgp {
        Some(p) => read_toml(p)?,
        None => DgpSpec::new(
            a.n,
            parse_noise(&a.noise, a.noise_param)?,
            parse_schedule(&a.schedule, a.knob)?,
        ),
    };
    let sim = generate_network(&spec, ctx.cfg.seed())?;
    write_network(&ctx.out, &sim.network, "x1")?;
    write_json(&ctx.path("truth.json"), &sim.truth)?;
    write_json(&ctx.path("dgp.json"), &spec)
}

fn mc_cmd(ctx: &Ctx, a: &McCmd) -> Result<()> {
    let mut study: McStudy = read_toml(&a.study)?;
    if let Some(r) = a.reps {
        study.replications = r;
    }
    if let Some(w) = a.workers {
        study.workers = w;
    }
    if let Some(s) = ctx.cfg.seed {
        study.master_seed = s;
    }
    let report = study.run()?;
    write_json(&ctx.path("mc_report.json"), &report)?;
    let rows: Vec<Vec<String>> = report
        .targets
        .iter()
        .map(|t| {
            vec![
                t.label.clone(),
                fmt_f64(t.truth),
                fmt_f64(t.bias),
                fmt_f64(t.sd),
                fmt_f64(t.cp),
                t.count.to_string(),
            ]
        })
        .collect();
    write_csv(
        &ctx.path("mc_targets.csv"),
        &["label", "truth", "bias", "sd", "cp", "count"],
        &rows,
    )?;
    let rows: Vec<Vec<String>> = report
        .tests
        .iter()
        .map(|t| {
            vec![
                t.label.clone(),
                t.rejections.to_string(),
                t.count.to_string(),
                fmt_f64(t.rate),
            ]
        })
        .collect();
    write_csv(
        &ctx.path("mc_tests.csv"),
        &["label", "rejections", "count", "rate"],
        &rows,
    )?;
    let rows: Vec<Vec<String>> = report
        .support
        .iter()
        .map(|s| {
            vec![
                s.label.clone(),
                fmt_f64(s.threshold),
                fmt_f64(s.mean_similarity),
                fmt_f64(s.sd_similarity),
                fmt_f64(s.mean_fp),
                fmt_f64(s.mean_fn),
                fmt_f64(s.exact_rate),
                s.count.to_string(),
            ]
        })
        .collect();
    write_csv(
        &ctx.path("mc_support.csv"),
        &[
            "label",
            "threshold",
            "mean_similarity",
            "sd_similarity",
            "mean_fp",
            "mean_fn",
            "exact_rate",
            "count",
        ],
        &rows,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn targets_parse_one_based() {
        let c = parse_target("alpha:2", 4, 2).unwrap();
        assert_eq!(c.terms, vec![(1, 1.0)]);
        let c = parse_target("beta-diff:1:4", 4, 2).unwrap();
        assert_eq!(c.terms, vec![(4, 1.0)]);
        assert!(parse_target("alpha:0", 4, 2).is_err());
        assert!(parse_target("eta:3", 4, 2).is_err());
        assert!(parse_target("gamma:1", 4, 2).is_err());
    }
}
