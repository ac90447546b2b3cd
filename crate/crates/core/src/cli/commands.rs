use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use anyhow::{anyhow, bail, Context};
use log::{info, warn};
use serde::Serialize;

use crate::background::{read_state, solve_selfconsistent, write_bundle, BackgroundState};
use crate::interactions::{pair_transition, PairQuery, PairResult};
use crate::model::{FirmCoord, InvestorCoord, ModelSpec, SectorValues};
use crate::numerics::interp;
use crate::oracle::{
    firm_comparison, investor_comparison, mc_simulate, spread_error, Boundary, Histogram2d, KernelComparison, McResult,
    Operator2d, OperatorKind, OracleReport, PdeSetup,
};
use crate::transition::{g1, g2, DriftParts, FirmQuery, InvestorQuery, TransitionResult};
use crate::Error;

use super::config::RunConfig;

pub const EXIT_OK: u8 = 0;
pub const EXIT_CONFIG: u8 = 1;
pub const EXIT_NUMERIC: u8 = 2;
pub const EXIT_PARTIAL: u8 = 3;

/// A failed command and the exit code it maps to.
#[derive(Debug)]
pub struct CmdError {
    pub code: u8,
    pub error: anyhow::Error,
}

impl CmdError {
    pub fn config(error: impl Into<anyhow::Error>) -> Self {
        CmdError {
            code: EXIT_CONFIG,
            error: error.into(),
        }
    }

    pub fn numeric(error: impl Into<anyhow::Error>) -> Self {
        CmdError {
            code: EXIT_NUMERIC,
            error: error.into(),
        }
    }
}

impl From<Error> for CmdError {
    fn from(e: Error) -> Self {
        CmdError {
            code: exit_code_for(&e),
            error: e.into(),
        }
    }
}

pub type CmdResult = std::result::Result<u8, CmdError>;

pub fn exit_code_for(e: &Error) -> u8 {
    match e {
        Error::InvalidGrid(_) | Error::InvalidSpec(_) | Error::OutOfRange(_) | Error::NonPositiveTau => EXIT_CONFIG,
        _ => EXIT_NUMERIC,
    }
}

/// Solver failures past validation are numeric, including iterates that leave
/// the grid.
fn solver_failure(e: Error) -> CmdError {
    match e {
        Error::OutOfRange(_) => CmdError::numeric(e),
        e => e.into(),
    }
}

fn io_err(e: impl Into<anyhow::Error>) -> CmdError {
    CmdError::config(e)
}

/// Reads an initial `K_X`: a CSV with a `value` column (as written in a
/// bundle's `k_x.csv`) or a JSON number or array.
pub fn read_init(path: &Path, nx: usize) -> anyhow::Result<Vec<f64>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let values = if path.extension().is_some_and(|e| e == "csv") {
        let mut r = csv::Reader::from_reader(text.as_bytes());
        let col = r
            .headers()?
            .iter()
            .position(|h| h == "value")
            .ok_or_else(|| anyhow!("{}: no `value` column", path.display()))?;
        let mut out = Vec::new();
        for rec in r.records() {
            out.push(rec?[col].trim().parse::<f64>()?);
        }
        SectorValues::Nodes(out)
    } else {
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
    };
    Ok(values.resolve(nx, "initial K_X")?)
}

fn write_history(path: &Path, history: &[f64]) -> anyhow::Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["iteration", "residual"])?;
    for (i, r) in history.iter().enumerate() {
        w.write_record([(i + 1).to_string(), r.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Solves the collective state and writes its bundle to `out`.
pub fn cmd_background(cfg: &RunConfig, out: &Path, init: Option<&Path>) -> CmdResult {
    let grid = cfg.grid.build()?;
    let init_kx = match init {
        Some(p) => read_init(p, grid.nx()).map_err(CmdError::config)?,
        None => cfg.initial_kx()?,
    };
    fs::create_dir_all(out)
        .with_context(|| format!("creating {}", out.display()))
        .map_err(io_err)?;
    match solve_selfconsistent(&cfg.model, &grid, &init_kx, &cfg.solver) {
        Ok(state) => {
            info!(
                "converged in {} iterations, residual {:e}",
                state.iterations, state.residual
            );
            write_bundle(&state, out).map_err(CmdError::config)?;
            Ok(EXIT_OK)
        }
        Err(e) => {
            if let Error::NoConvergence { history, .. } = &e {
                write_history(&out.join("residual_history.csv"), history).map_err(CmdError::config)?;
            }
            Err(solver_failure(e))
        }
    }
}

fn load_background(dir: &Path) -> std::result::Result<BackgroundState, CmdError> {
    read_state(dir)
        .with_context(|| format!("no background bundle in {}; run `background` first", dir.display()))
        .map_err(CmdError::config)
}

/// Header-keyed view of one query row.
struct Row<'a> {
    fields: HashMap<&'a str, &'a str>,
}

impl Row<'_> {
    fn get(&self, key: &str) -> anyhow::Result<f64> {
        let raw = self
            .fields
            .get(key)
            .map(|s| s.trim())
            .filter(|s| !s.is_empty())
            .ok_or_else(|| anyhow!("missing column `{key}`"))?;
        raw.parse().map_err(|_| anyhow!("column `{key}`: cannot parse `{raw}`"))
    }

    fn opt(&self, key: &str) -> anyhow::Result<Option<f64>> {
        match self.fields.get(key).map(|s| s.trim()) {
            None | Some("") => Ok(None),
            Some(_) => self.get(key).map(Some),
        }
    }

    fn firm(&self, spec: &ModelSpec, suffix: &str) -> anyhow::Result<FirmQuery> {
        let k = |name: &str| self.get(&format!("{name}{suffix}"));
        let s = match self.opt(&format!("s{suffix}"))? {
            Some(s) => s,
            None => spec.s_values[0],
        };
        Ok(FirmQuery {
            initial: FirmCoord::new(k("Ki")?, k("Xi")?, s),
            target: FirmCoord::new(k("Kf")?, k("Xf")?, s),
            alpha: self.alpha(spec, suffix)?,
        })
    }

    fn investor(&self, spec: &ModelSpec, suffix: &str) -> anyhow::Result<InvestorQuery> {
        let k = |name: &str| self.get(&format!("{name}{suffix}"));
        Ok(InvestorQuery {
            initial: InvestorCoord::new(k("Khati")?, k("Xhati")?),
            target: InvestorCoord::new(k("Khatf")?, k("Xhatf")?),
            alpha: self.alpha(spec, suffix)?,
        })
    }

    fn alpha(&self, spec: &ModelSpec, suffix: &str) -> anyhow::Result<f64> {
        if let Some(a) = self.opt(&format!("alpha{suffix}"))? {
            return Ok(a);
        }
        Ok(self.opt("alpha")?.unwrap_or(spec.alpha))
    }
}

#[derive(Default)]
struct ResultRow {
    endpoints: String,
    log_value: Option<f64>,
    value: Option<f64>,
    d: [Option<f64>; 3],
    alpha_eff: Option<f64>,
    vertex: Option<f64>,
}

fn firm_endpoints(q: &FirmQuery) -> String {
    format!(
        "({},{},{})->({},{})",
        q.initial.k, q.initial.x, q.initial.s, q.target.k, q.target.x
    )
}

fn investor_endpoints(q: &InvestorQuery) -> String {
    format!(
        "({},{})->({},{})",
        q.initial.khat, q.initial.xhat, q.target.khat, q.target.xhat
    )
}

fn single(r: TransitionResult, endpoints: String) -> ResultRow {
    let d = match r.drift_parts {
        DriftParts::Firm { d1, d2, d3 } => [Some(d1), Some(d2), Some(d3)],
        DriftParts::Investor { path, capital } => [Some(path), Some(capital), None],
    };
    ResultRow {
        endpoints,
        log_value: Some(r.log_value),
        value: Some(r.value()),
        d,
        alpha_eff: Some(r.alpha_eff),
        vertex: None,
    }
}

fn pair(r: PairResult, endpoints: String) -> ResultRow {
    ResultRow {
        endpoints,
        log_value: (r.value > 0.0).then(|| r.value.ln()),
        value: Some(r.value),
        vertex: r.vertex.map(|v| v.value),
        ..ResultRow::default()
    }
}

fn evaluate_row(spec: &ModelSpec, bg: &BackgroundState, kind: &str, row: &Row) -> anyhow::Result<ResultRow> {
    Ok(match kind {
        "firm" => {
            let q = row.firm(spec, "")?;
            single(g1(spec, bg, &q)?, firm_endpoints(&q))
        }
        "investor" => {
            let q = row.investor(spec, "")?;
            single(g2(spec, bg, &q)?, investor_endpoints(&q))
        }
        "firm_firm" => {
            let (a, b) = (row.firm(spec, "")?, row.firm(spec, "_b")?);
            let pq = PairQuery::FirmFirm {
                a,
                b,
                crossing: row.opt("Xc")?,
            };
            pair(
                pair_transition(spec, bg, &pq)?,
                format!("{};{}", firm_endpoints(&a), firm_endpoints(&b)),
            )
        }
        "firm_investor" => {
            let (a, b) = (row.firm(spec, "")?, row.investor(spec, "_b")?);
            let pq = PairQuery::FirmInvestor {
                a,
                b,
                crossing: row.opt("Xc")?,
            };
            pair(
                pair_transition(spec, bg, &pq)?,
                format!("{};{}", firm_endpoints(&a), investor_endpoints(&b)),
            )
        }
        "investor_investor" => {
            let (a, b) = (row.investor(spec, "")?, row.investor(spec, "_b")?);
            let pq = PairQuery::InvestorInvestor { a, b };
            pair(
                pair_transition(spec, bg, &pq)?,
                format!("{};{}", investor_endpoints(&a), investor_endpoints(&b)),
            )
        }
        other => bail!("unknown query kind `{other}`"),
    })
}

fn cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub const TRANSITION_HEADER: [&str; 11] = [
    "row",
    "kind",
    "endpoints",
    "log_value",
    "value",
    "D1",
    "D2",
    "D3",
    "alpha_eff",
    "vertex",
    "error",
];

/// Evaluates every row of `queries` against the bundle in `bundle`; failed
/// rows carry their message in the `error` column.
pub fn cmd_transition(cfg: &RunConfig, bundle: &Path, queries: &Path, out: &Path) -> CmdResult {
    let bg = load_background(bundle)?;
    let mut reader = csv::ReaderBuilder::new()
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(queries)
        .with_context(|| format!("opening {}", queries.display()))
        .map_err(io_err)?;
    let headers = reader.headers().map_err(io_err)?.clone();
    fs::create_dir_all(out).map_err(io_err)?;
    let path = out.join("transitions.csv");
    let mut w = csv::Writer::from_path(&path).map_err(io_err)?;
    w.write_record(TRANSITION_HEADER).map_err(io_err)?;
    let mut failed = 0usize;
    let mut total = 0usize;
    for (i, rec) in reader.records().enumerate() {
        total += 1;
        let (kind, outcome) = match rec {
            Ok(rec) => {
                let fields: HashMap<&str, &str> = headers.iter().zip(rec.iter()).collect();
                let kind = fields.get("kind").copied().unwrap_or("").to_string();
                let row = Row { fields };
                let outcome = evaluate_row(&cfg.model, &bg, &kind, &row);
                (kind, outcome)
            }
            Err(e) => (String::new(), Err(e.into())),
        };
        let record = match outcome {
            Ok(r) => vec![
                i.to_string(),
                kind,
                r.endpoints,
                cell(r.log_value),
                cell(r.value),
                cell(r.d[0]),
                cell(r.d[1]),
                cell(r.d[2]),
                cell(r.alpha_eff),
                cell(r.vertex),
                String::new(),
            ],
            Err(e) => {
                failed += 1;
                warn!("row {i}: {e:#}");
                let mut v = vec![i.to_string(), kind];
                v.extend(std::iter::repeat_n(String::new(), 8));
                v.push(format!("{e:#}"));
                v
            }
        };
        w.write_record(&record).map_err(io_err)?;
    }
    w.flush().map_err(io_err)?;
    info!("{total} queries, {failed} failed");
    if failed > 0 {
        return Err(CmdError::numeric(anyhow!(
            "{failed} of {total} queries failed; see {}",
            path.display()
        )));
    }
    Ok(EXIT_OK)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct McSummary {
    pub seed: u64,
    pub n_paths: usize,
    pub n_investor_paths: usize,
    pub displacement_mean: f64,
    pub displacement_se: f64,
    pub reflections: usize,
    pub firm_outside: u64,
    pub investor_outside: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleOutput {
    pub alpha: f64,
    pub firm: Option<OracleReport>,
    /// Pure-diffusion second-moment error on the firm PDE grid.
    pub firm_spread: Option<SpreadCheck>,
    pub investor: Option<OracleReport>,
    pub investor_spread: Option<SpreadCheck>,
    pub mc: Option<McSummary>,
}

fn write_kernel(path: &Path, cmp: &KernelComparison, b_name: &str) -> anyhow::Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["x", b_name, "oracle", "closed", "resolvent"])?;
    let mut idx = 0;
    for a in &cmp.a_nodes {
        for b in &cmp.b_nodes {
            w.write_record([
                a.to_string(),
                b.to_string(),
                cmp.oracle[idx].to_string(),
                cmp.closed[idx].to_string(),
                cmp.resolvent[idx].to_string(),
            ])?;
            idx += 1;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_histogram(path: &Path, h: &Histogram2d, b_name: &str) -> anyhow::Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["x", b_name, "count", "density"])?;
    let density = h.density();
    let (ca, cb) = (Histogram2d::centers(&h.a), Histogram2d::centers(&h.b));
    let mut idx = 0;
    for a in &ca {
        for b in &cb {
            w.write_record([
                a.to_string(),
                b.to_string(),
                h.counts[idx].to_string(),
                density[idx].to_string(),
            ])?;
            idx += 1;
        }
    }
    w.flush()?;
    Ok(())
}

/// Pure-diffusion second-moment check on a PDE grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SpreadCheck {
    /// Shortened so the kernel stays well inside the walls.
    pub horizon: f64,
    pub error: f64,
}

/// Walls sit at least this many kernel standard deviations from the source.
const SPREAD_WALL_SIGMAS: f64 = 7.0;

fn diffusion_check(setup: &PdeSetup, d_a: f64, d_b: f64) -> crate::Result<SpreadCheck> {
    let half = |ax: &crate::model::AxisSpec| 0.5 * (ax.max - ax.min);
    let t_wall = |w: f64, d: f64| (w / SPREAD_WALL_SIGMAS).powi(2) / (2.0 * d);
    let t_max = t_wall(half(&setup.x_axis), d_a).min(t_wall(half(&setup.capital_axis), d_b));
    let steps = ((t_max.min(setup.horizon) / setup.dt).floor() as usize).max(1);
    let s = PdeSetup {
        boundary: Boundary::Absorbing,
        horizon: steps as f64 * setup.dt,
        record_every: steps,
        ..*setup
    };
    let op = Operator2d::new(s.x_axis, s.capital_axis, d_a, d_b, |_, _| 0.0, s.boundary);
    let mid = |ax: &crate::model::AxisSpec| 0.5 * (ax.min + ax.max);
    let error = spread_error(&op, &s, (mid(&s.x_axis), mid(&s.capital_axis)))?;
    Ok(SpreadCheck {
        horizon: s.horizon,
        error,
    })
}

fn default_firm_source(spec: &ModelSpec, bg: &BackgroundState, setup: &PdeSetup) -> FirmCoord {
    let x = 0.5 * (setup.x_axis.min + setup.x_axis.max);
    FirmCoord::new(interp(bg.grid.x(), &bg.k_x, x), x, spec.s_values[0])
}

fn default_investor_source(bg: &BackgroundState, setup: &PdeSetup) -> InvestorCoord {
    let x = 0.5 * (setup.x_axis.min + setup.x_axis.max);
    InvestorCoord::new(interp(bg.grid.x(), &bg.khat_x, x), x)
}

fn mc_summary(setup: &crate::oracle::McSetup, r: &McResult) -> McSummary {
    let (mean, se) = r.firm_displacement();
    McSummary {
        seed: setup.seed,
        n_paths: setup.n_paths,
        n_investor_paths: setup.n_investor_paths,
        displacement_mean: mean,
        displacement_se: se,
        reflections: r.reflections,
        firm_outside: r.firm_hist.outside,
        investor_outside: r.investor_hist.outside,
    }
}

/// Runs the configured oracle comparisons and writes `report.json` plus kernel
/// and histogram CSVs. No timings are recorded, so equal inputs give equal bytes.
pub fn cmd_oracle(cfg: &RunConfig, bundle: &Path, out: &Path, seed: Option<u64>) -> CmdResult {
    let oc = cfg
        .oracle
        .as_ref()
        .ok_or_else(|| CmdError::config(anyhow!("configuration has no `oracle` section")))?;
    let bg = load_background(bundle)?;
    let spec = &cfg.model;
    let alpha = oc.alpha.unwrap_or(spec.alpha);
    fs::create_dir_all(out).map_err(io_err)?;
    let mut output = OracleOutput {
        alpha,
        firm: None,
        firm_spread: None,
        investor: None,
        investor_spread: None,
        mc: None,
    };
    if let Some(setup) = &oc.firm_pde {
        if setup.operator == OperatorKind::Investor {
            return Err(CmdError::config(anyhow!(
                "oracle.firm_pde.operator must be a firm operator"
            )));
        }
        let src = oc.firm_source.unwrap_or_else(|| default_firm_source(spec, &bg, setup));
        let cmp = firm_comparison(spec, &bg, setup, &src, alpha)?;
        write_kernel(&out.join("firm_kernel.csv"), &cmp, "k").map_err(io_err)?;
        output.firm_spread = Some(diffusion_check(setup, 0.5 * spec.sigma_x2, 0.5 * spec.sigma_k2)?);
        output.firm = Some(cmp.report);
    }
    if let Some(setup) = &oc.investor_pde {
        if setup.operator != OperatorKind::Investor {
            return Err(CmdError::config(anyhow!(
                "oracle.investor_pde.operator must be `investor`"
            )));
        }
        let src = oc
            .investor_source
            .unwrap_or_else(|| default_investor_source(&bg, setup));
        let cmp = investor_comparison(spec, &bg, setup, &src, alpha)?;
        write_kernel(&out.join("investor_kernel.csv"), &cmp, "khat").map_err(io_err)?;
        output.investor_spread = Some(diffusion_check(setup, 0.5 * spec.sigma_xhat2, 1.0)?);
        output.investor = Some(cmp.report);
    }
    if let Some(mc) = &oc.mc {
        let mut setup = mc.clone();
        if let Some(s) = seed.or(cfg.seed) {
            setup.seed = s;
        }
        let r = mc_simulate(&setup, spec, &bg)?;
        write_histogram(&out.join("mc_firm_histogram.csv"), &r.firm_hist, "k").map_err(io_err)?;
        if setup.n_investor_paths > 0 {
            write_histogram(&out.join("mc_investor_histogram.csv"), &r.investor_hist, "khat").map_err(io_err)?;
        }
        let mut w = csv::Writer::from_path(out.join("mc_capital_gap.csv")).map_err(io_err)?;
        w.write_record(["t", "capital_gap"]).map_err(io_err)?;
        for (i, g) in r.capital_gap.iter().enumerate() {
            w.write_record([((i + 1) as f64 * setup.dt).to_string(), g.to_string()])
                .map_err(io_err)?;
        }
        w.flush().map_err(io_err)?;
        output.mc = Some(mc_summary(&setup, &r));
    }
    let text = serde_json::to_string_pretty(&output).map_err(io_err)?;
    fs::write(out.join("report.json"), text).map_err(io_err)?;
    Ok(EXIT_OK)
}

#[derive(Debug, Clone)]
struct SweepOutcome {
    d_const: Option<f64>,
    residual: Option<f64>,
    iterations: Option<usize>,
    status: String,
}

fn run_tuple(cfg: &RunConfig, values: &[f64], dir: &Path) -> SweepOutcome {
    let failed = |status: String| SweepOutcome {
        d_const: None,
        residual: None,
        iterations: None,
        status,
    };
    let one = match cfg.with_parameters(values) {
        Ok(c) => c,
        Err(e) => return failed(format!("config: {e:#}")),
    };
    let run = || -> std::result::Result<BackgroundState, CmdError> {
        let grid = one.grid.build()?;
        let init = one.initial_kx()?;
        fs::create_dir_all(dir).map_err(io_err)?;
        match solve_selfconsistent(&one.model, &grid, &init, &one.solver) {
            Ok(state) => {
                write_bundle(&state, dir).map_err(io_err)?;
                Ok(state)
            }
            Err(e) => {
                if let Error::NoConvergence { history, .. } = &e {
                    write_history(&dir.join("residual_history.csv"), history).map_err(io_err)?;
                }
                Err(solver_failure(e))
            }
        }
    };
    match run() {
        Ok(s) => SweepOutcome {
            d_const: Some(s.d_const),
            residual: Some(s.residual),
            iterations: Some(s.iterations),
            status: "ok".into(),
        },
        Err(e) => failed(format!("{:#}", e.error)),
    }
}

/// Solves the background for every sweep tuple, each in its own
/// subdirectory, and writes `index.csv` in tuple order.
pub fn cmd_sweep(cfg: &RunConfig, out: &Path, workers: usize) -> CmdResult {
    let tuples = cfg.sweep_tuples();
    for axis in &cfg.sweep {
        // Resolve every path once so a typo is a config error, not n failures.
        let probe = RunConfig {
            sweep: vec![axis.clone()],
            ..cfg.clone()
        };
        probe.with_parameters(&axis.values[..1]).map_err(CmdError::config)?;
    }
    fs::create_dir_all(out).map_err(io_err)?;
    let dirs: Vec<PathBuf> = (0..tuples.len()).map(|i| out.join(format!("run_{i:04}"))).collect();
    let results: Mutex<Vec<Option<SweepOutcome>>> = Mutex::new(vec![None; tuples.len()]);
    let next = AtomicUsize::new(0);
    let workers = workers.clamp(1, tuples.len().max(1));
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= tuples.len() {
                    break;
                }
                let r = run_tuple(cfg, &tuples[i], &dirs[i]);
                info!("sweep tuple {i}: {}", r.status);
                results.lock().expect("sweep results lock")[i] = Some(r);
            });
        }
    });
    let results = results.into_inner().expect("sweep results lock");
    let mut w = csv::Writer::from_path(out.join("index.csv")).map_err(io_err)?;
    let mut header = vec!["run".to_string(), "dir".to_string()];
    header.extend(cfg.sweep.iter().map(|a| a.parameter.clone()));
    header.extend(["d_const", "residual", "iterations", "status"].map(String::from));
    w.write_record(&header).map_err(io_err)?;
    let mut failures = 0;
    for (i, (values, r)) in tuples.iter().zip(results).enumerate() {
        let r = r.expect("every tuple ran");
        if r.status != "ok" {
            failures += 1;
        }
        let mut rec = vec![i.to_string(), format!("run_{i:04}")];
        rec.extend(values.iter().map(|v| v.to_string()));
        rec.push(cell(r.d_const));
        rec.push(cell(r.residual));
        rec.push(r.iterations.map(|n| n.to_string()).unwrap_or_default());
        rec.push(r.status);
        w.write_record(&rec).map_err(io_err)?;
    }
    w.flush().map_err(io_err)?;
    if failures > 0 {
        return Err(CmdError {
            code: EXIT_PARTIAL,
            error: anyhow!("{failures} of {} sweep tuples failed", tuples.len()),
        });
    }
    Ok(EXIT_OK)
}
