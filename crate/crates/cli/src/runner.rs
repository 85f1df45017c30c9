//! Experiment execution: run the configured model, execute diagnostics,
//! write `stats.csv`, `summary.json`, and optional per-replica traces.
//!
//! Determinism contract: identical config (including seed) produces
//! byte-identical artifacts regardless of worker count. Replicas own
//! counter-keyed streams and the reduction is ordered, so the thread pool
//! size never touches the numbers; everything else is sequential.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use nalgebra::DVector;
use serde::Serialize;
use serde_json::{json, Value};

use opinion_dynamics::degroot::{degroot_run, OpinionState};
use opinion_dynamics::diagnostics::{
    check_conditional_variance, check_increment_moment_decay, check_layer_herding,
    check_martingale_increment_variance, check_supermartingale, check_tail_concentration,
    compute_trust_layers, oscillating_counterexample, MomentOrder,
};
use opinion_dynamics::graph::partition;
use opinion_dynamics::ra_sim::{replica_rng, run_batch_traces, BatchSummary, ReplicaTrace};
use opinion_dynamics::spectral::{spectral_radius_perron, verify_rowsum_contraction};
use opinion_dynamics::{InitSpec, PartitionedTrust, SimConfig, TrustMatrix};

use crate::config::{
    load_config, resolve, ConfigError, DiagnosticConfig, Experiment, Model,
};

const SCHEMA_VERSION: u32 = 1;

pub struct RunOptions {
    pub jobs: Option<usize>,
    pub out: Option<PathBuf>,
    pub trace: bool,
    pub eps: Option<f64>,
    pub seed: Option<u64>,
}

#[derive(Serialize)]
struct NetworkInfo {
    k: usize,
    stubborn: Option<usize>,
    relabeled_from: Option<usize>,
    lambda: Option<f64>,
    psi: Option<Vec<f64>>,
    eig_residual: Option<f64>,
    layers: Option<Vec<Vec<usize>>>,
}

#[derive(Serialize)]
struct RunEcho {
    horizon: u64,
    seed: u64,
    eps: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    alpha: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    replicas: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    tol: Option<f64>,
    role: String,
    init: String,
}

#[derive(Serialize)]
struct DiagnosticOutcome {
    name: String,
    pass: bool,
    detail: Value,
}

#[derive(Serialize)]
struct Summary {
    schema_version: u32,
    model: Model,
    network: NetworkInfo,
    run: RunEcho,
    model_pass: bool,
    model_detail: Value,
    diagnostics: Vec<DiagnosticOutcome>,
    pass: bool,
}

fn describe_init(init: &InitSpec) -> String {
    match init {
        InitSpec::Constant(v) => format!("constant({v})"),
        InitSpec::UniformRandom => "uniform".into(),
        InitSpec::Explicit(v) => format!("explicit[{}]", v.len()),
    }
}

fn describe_role(sim: &SimConfig) -> String {
    use opinion_dynamics::RoleKind;
    match &sim.role.kind {
        RoleKind::None => "none".into(),
        RoleKind::Stubborn => "stubborn".into(),
        RoleKind::Drifting(law) => format!("drifting({law:?})"),
    }
}

fn network_info(
    trust: &TrustMatrix,
    part: Option<&PartitionedTrust>,
) -> Result<NetworkInfo, ConfigError> {
    let layers = match part {
        Some(p) => Some(
            compute_trust_layers(p)
                .map_err(|e| ConfigError(e.to_string()))?
                .layers,
        ),
        None => None,
    };
    Ok(NetworkInfo {
        k: trust.size(),
        stubborn: trust.stubborn(),
        relabeled_from: trust.relabeled_from(),
        lambda: part.map(|p| p.lambda),
        psi: part.map(|p| p.psi.iter().copied().collect()),
        eig_residual: part.map(|p| p.eig_residual),
        layers,
    })
}

/// Load, validate, and print the network and config facts without running.
pub fn cmd_validate(config_path: &Path) -> Result<(), ConfigError> {
    let config = load_config(config_path)?;
    let exp = resolve(&config, config_path)?;
    let part = match exp.trust.stubborn() {
        Some(_) => Some(partition(&exp.trust).map_err(|e| ConfigError(e.to_string()))?),
        None => None,
    };
    let info = network_info(&exp.trust, part.as_ref())?;

    match info.stubborn {
        Some(s) => println!("network: K={}, stubborn agent {s}", info.k),
        None => println!("network: K={}, no stubborn agent", info.k),
    }
    if let Some(p) = &part {
        println!("lambda = rho(Q) = {:.12}", p.lambda);
        let psi: Vec<String> = p.psi.iter().map(|v| format!("{v:.6}")).collect();
        println!("psi = [{}]", psi.join(", "));
        for (i, layer) in info.layers.iter().flatten().enumerate() {
            let members: Vec<String> = layer.iter().map(usize::to_string).collect();
            println!("trust layer {i}: {{{}}}", members.join(", "));
        }
    }
    let model_name = match exp.model {
        Model::Degroot => "degroot",
        Model::Ra => "ra",
    };
    println!(
        "model: {model_name}, role: {}, horizon: {}, seed: {}",
        describe_role(&exp.sim),
        exp.sim.horizon,
        exp.sim.seed,
    );
    let names: Vec<&str> = exp.diagnostics.iter().map(|d| d.name.as_str()).collect();
    println!("diagnostics ({}): {}", names.len(), names.join(", "));
    println!("valid");
    Ok(())
}

/// Execute the experiment. `Ok(true)` means every hard assertion passed.
pub fn cmd_run(config_path: &Path, opts: &RunOptions) -> Result<bool, ConfigError> {
    let mut config = load_config(config_path)?;
    if let Some(eps) = opts.eps {
        config.sim.eps = Some(eps);
    }
    if let Some(seed) = opts.seed {
        config.sim.seed = Some(seed);
    }
    let mut exp = resolve(&config, config_path)?;
    if let Some(out) = &opts.out {
        exp.out_dir = out.clone();
    }

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.jobs.unwrap_or(0))
        .build()
        .map_err(|e| ConfigError(format!("cannot build thread pool: {e}")))?;
    pool.install(|| execute(&exp, opts))
}

fn execute(exp: &Experiment, opts: &RunOptions) -> Result<bool, ConfigError> {
    fs::create_dir_all(&exp.out_dir)
        .map_err(|e| ConfigError(format!("cannot create {}: {e}", exp.out_dir.display())))?;

    let part = match exp.trust.stubborn() {
        Some(_) => Some(partition(&exp.trust).map_err(|e| ConfigError(e.to_string()))?),
        None => None,
    };
    let info = network_info(&exp.trust, part.as_ref())?;

    let (model_pass, model_detail, batch, traces) = match exp.model {
        Model::Degroot => {
            let (pass, detail) = run_degroot(exp, opts)?;
            (pass, detail, None, None)
        }
        Model::Ra => {
            let (summary, traces) =
                run_batch_traces(&exp.trust, &exp.sim).map_err(|e| ConfigError(e.to_string()))?;
            if exp.write_csv {
                write_ra_stats(exp, &summary)?;
                if opts.trace {
                    write_traces(exp, &traces)?;
                }
            }
            let last = summary.steps.len() - 1;
            let detail = json!({
                "replicas": summary.replicas,
                "recorded_steps": summary.steps.len(),
                "final_step": summary.steps[last],
                "final_mean_x": summary.mean_x[last],
            });
            (true, detail, Some(summary), Some(traces))
        }
    };

    let mut outcomes = Vec::new();
    let mut all_pass = model_pass;
    for (index, diag) in exp.diagnostics.iter().enumerate() {
        let (pass, detail) = run_diagnostic(
            diag,
            index,
            exp,
            part.as_ref(),
            batch.as_ref(),
            traces.as_deref(),
        );
        all_pass &= pass;
        outcomes.push(DiagnosticOutcome {
            name: diag.name.clone(),
            pass,
            detail,
        });
    }

    let summary = Summary {
        schema_version: SCHEMA_VERSION,
        model: exp.model,
        network: info,
        run: RunEcho {
            horizon: exp.sim.horizon,
            seed: exp.sim.seed,
            eps: exp.sim.eps,
            alpha: matches!(exp.model, Model::Ra).then_some(exp.sim.alpha),
            replicas: matches!(exp.model, Model::Ra).then_some(exp.sim.replicas),
            tol: matches!(exp.model, Model::Degroot).then_some(exp.tol),
            role: describe_role(&exp.sim),
            init: describe_init(&exp.sim.init),
        },
        model_pass,
        model_detail,
        diagnostics: outcomes,
        pass: all_pass,
    };
    if exp.write_json {
        let text = serde_json::to_string_pretty(&summary)
            .map_err(|e| ConfigError(format!("cannot serialize summary: {e}")))?;
        write_file(&exp.out_dir.join("summary.json"), &(text + "\n"))?;
    }
    Ok(all_pass)
}

fn run_degroot(exp: &Experiment, opts: &RunOptions) -> Result<(bool, Value), ConfigError> {
    let k = exp.trust.size();
    let x0 = match &exp.sim.init {
        InitSpec::Constant(v) => DVector::from_element(k, *v),
        InitSpec::UniformRandom => {
            let mut rng = replica_rng(exp.sim.seed, 0);
            DVector::from_fn(k, |_, _| rand::Rng::random::<f64>(&mut rng))
        }
        InitSpec::Explicit(values) => {
            if values.len() != k {
                return Err(ConfigError(format!(
                    "degroot init needs {k} opinions (all agents), got {}",
                    values.len()
                )));
            }
            if values.iter().any(|v| !v.is_finite()) {
                return Err(ConfigError("initial opinions must be finite".into()));
            }
            DVector::from_row_slice(values)
        }
    };
    match degroot_run(&exp.trust, &OpinionState::new(x0), exp.sim.horizon, exp.tol) {
        Ok(run) => {
            if exp.write_csv {
                let mut text = format!("# schema_version={SCHEMA_VERSION}\n");
                text += "n,err_inf";
                if opts.trace {
                    for i in 1..k {
                        text += &format!(",y_{i}");
                    }
                }
                text += "\n";
                for (row, (n, err)) in run.trace.iter().enumerate() {
                    text += &format!("{n},{err}");
                    if opts.trace {
                        for v in run.opinions[row].iter() {
                            text += &format!(",{v}");
                        }
                    }
                    text += "\n";
                }
                write_file(&exp.out_dir.join("stats.csv"), &text)?;
            }
            let detail = json!({
                "steps": run.steps,
                "final_err_inf": run.trace.last().map(|&(_, e)| e),
                "rho": run.rho,
                "rate_estimate": run.rate_estimate,
                "rate_bound": run.rate_bound,
                "consensus_value": run.final_state.values[0],
            });
            Ok((true, detail))
        }
        Err(e) => {
            if exp.write_csv {
                let text = format!("# schema_version={SCHEMA_VERSION}\nn,err_inf\n");
                write_file(&exp.out_dir.join("stats.csv"), &text)?;
            }
            Ok((false, json!({ "error": e.to_string() })))
        }
    }
}

fn write_ra_stats(exp: &Experiment, summary: &BatchSummary) -> Result<(), ConfigError> {
    let mut text = format!("# schema_version={SCHEMA_VERSION}\n");
    text += "n,stat_name,agent,value\n";
    let per_agent: [(&str, &Vec<Vec<f64>>); 4] = [
        ("mean_x", &summary.mean_x),
        ("tail_gt", &summary.tail_gt),
        ("middle", &summary.middle),
        ("prod_sq", &summary.prod_sq),
    ];
    let scalar: [(&str, &Vec<f64>); 5] = [
        ("s_mean", &summary.s_mean),
        ("ds_mean", &summary.ds_mean),
        ("ds_var", &summary.ds_var),
        ("ds_m2", &summary.ds_m2),
        ("ds_m4", &summary.ds_m4),
    ];
    for (si, &n) in summary.steps.iter().enumerate() {
        for (stat, data) in &per_agent {
            for (agent, value) in data[si].iter().enumerate() {
                text += &format!("{n},{stat},{agent},{value}\n");
            }
        }
        for (stat, data) in &scalar {
            if let Some(value) = data.get(si) {
                text += &format!("{n},{stat},,{value}\n");
            }
        }
    }
    write_file(&exp.out_dir.join("stats.csv"), &text)
}

fn write_traces(exp: &Experiment, traces: &[ReplicaTrace]) -> Result<(), ConfigError> {
    let dir = exp.out_dir.join("traces");
    fs::create_dir_all(&dir)
        .map_err(|e| ConfigError(format!("cannot create {}: {e}", dir.display())))?;
    let with_s = traces.first().is_some_and(|t| !t.s.is_empty());
    for trace in traces {
        let k = trace.states.first().map_or(0, |x| x.len());
        let mut text = format!("# schema_version={SCHEMA_VERSION}\n");
        text += "n";
        for i in 0..k {
            text += &format!(",x_{i}");
        }
        if with_s {
            text += ",s,ds";
        }
        text += "\n";
        for (row, &n) in trace.steps.iter().enumerate() {
            text += &n.to_string();
            for v in trace.states[row].iter() {
                text += &format!(",{v}");
            }
            if with_s {
                text += &format!(",{},{}", trace.s[row], trace.ds[row]);
            }
            text += "\n";
        }
        write_file(&dir.join(format!("replica_{}.csv", trace.replica_id)), &text)?;
    }
    Ok(())
}

fn write_file(path: &Path, text: &str) -> Result<(), ConfigError> {
    let mut file = fs::File::create(path)
        .map_err(|e| ConfigError(format!("cannot create {}: {e}", path.display())))?;
    file.write_all(text.as_bytes())
        .map_err(|e| ConfigError(format!("cannot write {}: {e}", path.display())))
}

/// Streams for diagnostic Monte Carlo loops live at the top of the stream
/// space, far away from replica ids.
fn diag_rng(seed: u64, index: usize) -> rand_chacha::ChaCha8Rng {
    replica_rng(seed, u64::MAX - index as u64)
}

fn run_diagnostic(
    diag: &DiagnosticConfig,
    index: usize,
    exp: &Experiment,
    part: Option<&PartitionedTrust>,
    batch: Option<&BatchSummary>,
    traces: Option<&[ReplicaTrace]>,
) -> (bool, Value) {
    let fail = |msg: String| (false, json!({ "error": msg }));
    let to_detail = |value: Result<Value, serde_json::Error>| {
        value.unwrap_or_else(|e| json!({ "error": format!("serialization: {e}") }))
    };
    match diag.name.as_str() {
        "supermartingale" => {
            let (Some(p), Some(traces)) = (part, traces) else {
                return fail("needs a partitioned network and recorded traces".into());
            };
            let rid = diag.replica.unwrap_or(0) as usize;
            let Some(trace) = traces.get(rid) else {
                return fail(format!("replica {rid} not available"));
            };
            match check_supermartingale(p, trace, exp.sim.alpha) {
                Ok(report) => (true, to_detail(serde_json::to_value(&report))),
                Err(e) => fail(e.to_string()),
            }
        }
        "conditional_variance" => {
            let Some(p) = part else {
                return fail("needs a partitioned network".into());
            };
            let m = p.ordinary_count();
            let y = match &diag.y {
                Some(values) => DVector::from_row_slice(values),
                None => DVector::from_element(m, 0.5),
            };
            let alpha = diag.alpha.unwrap_or(exp.sim.alpha);
            let samples = diag.samples.unwrap_or(100_000);
            let mut rng = diag_rng(exp.sim.seed, index);
            match check_conditional_variance(p, &y, alpha, samples, &mut rng) {
                Ok(report) => (true, to_detail(serde_json::to_value(&report))),
                Err(e) => fail(e.to_string()),
            }
        }
        "increment_moment_decay" => {
            let Some(batch) = batch else {
                return fail("needs a batch run".into());
            };
            let order = match diag.order.unwrap_or(2) {
                2 => MomentOrder::Two,
                _ => MomentOrder::Four,
            };
            let threshold = diag.threshold.unwrap_or(1e-3);
            match check_increment_moment_decay(batch, order, threshold) {
                Ok(report) => {
                    let pass = report.decayed && report.below_threshold;
                    (pass, to_detail(serde_json::to_value(&report)))
                }
                Err(e) => fail(e.to_string()),
            }
        }
        "tail_concentration" => {
            let Some(batch) = batch else {
                return fail("needs a batch run".into());
            };
            match check_tail_concentration(batch, exp.sim.eps) {
                Ok(report) => (report.pass, to_detail(serde_json::to_value(&report))),
                Err(e) => fail(e.to_string()),
            }
        }
        "trust_layers" => {
            let Some(p) = part else {
                return fail("needs a partitioned network".into());
            };
            match compute_trust_layers(p) {
                Ok(layers) => (true, to_detail(serde_json::to_value(&layers))),
                Err(e) => fail(e.to_string()),
            }
        }
        "layer_herding" => {
            let (Some(p), Some(batch)) = (part, batch) else {
                return fail("needs a partitioned network and a batch run".into());
            };
            let layers = match compute_trust_layers(p) {
                Ok(layers) => layers,
                Err(e) => return fail(e.to_string()),
            };
            match check_layer_herding(batch, &layers, exp.sim.eps) {
                Ok(report) => (report.all_below, to_detail(serde_json::to_value(&report))),
                Err(e) => fail(e.to_string()),
            }
        }
        "counterexample" => {
            let horizon = diag.horizon.unwrap_or(100);
            let trace = oscillating_counterexample(horizon);
            let pass = trace.max_product() == 0.0 && trace.spread() == 1.0;
            (
                pass,
                json!({
                    "horizon": horizon,
                    "max_product": trace.max_product(),
                    "spread": trace.spread(),
                }),
            )
        }
        "rowsum_contraction" => {
            let Some(p) = part else {
                return fail("needs a partitioned network".into());
            };
            match verify_rowsum_contraction(&p.q) {
                Ok(report) => (report.all_pass(), to_detail(serde_json::to_value(&report))),
                Err(e) => fail(e.to_string()),
            }
        }
        "increment_variance" => {
            let pi = match spectral_radius_perron(exp.trust.weights()) {
                Ok(data) => data.left_vector,
                Err(e) => return fail(e.to_string()),
            };
            let k = exp.trust.size();
            let x = match &diag.x {
                Some(values) => DVector::from_row_slice(values),
                None => DVector::from_element(k, 0.5),
            };
            let alpha = diag.alpha.unwrap_or(exp.sim.alpha);
            let samples = diag.samples.unwrap_or(100_000);
            let mut rng = diag_rng(exp.sim.seed, index);
            match check_martingale_increment_variance(&exp.trust, &pi, &x, alpha, samples, &mut rng)
            {
                Ok(report) => (true, to_detail(serde_json::to_value(&report))),
                Err(e) => fail(e.to_string()),
            }
        }
        other => fail(format!("unknown diagnostic '{other}'")),
    }
}
