mod csi_cmd;
mod output;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Parser, Subcommand};

use bluetrail::adversary::{
    evaluate_against_truth, parse_threats, reports_to_jsonl, run_attacks, AttackParams, IncidentQuery, PosDatabase,
};
use bluetrail::matrix::{defense_matrix, parse_defenses, side_inputs};
use bluetrail::model::{OuiTable, ValueTable};
use bluetrail::scenario::{load_scenario, ScenarioConfig};
use bluetrail::sim::{point_of_sale_database, run};
use bluetrail::trace::TraceBundle;
use bluetrail::{DeviceId, Tick};

use output::{OutDir, RunManifest};

const DEFAULT_OUI: &str = include_str!("../../../data/oui.txt");
const DEFAULT_VALUES: &str = include_str!("../../../data/values.txt");

#[derive(Parser)]
#[command(name = "bluetrail", version, about = "Bluetooth proximity-trace simulator and attack bench")]
struct Cli {
    /// Print the field schema of every line record and exit.
    #[arg(long)]
    print_schema: bool,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and write its trace.
    Simulate {
        #[arg(long)]
        scenario: PathBuf,
        /// Overrides the scenario's own seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run attacks on a trace; scores them when the trace carries truth.
    Attack {
        #[arg(long)]
        trace: PathBuf,
        #[arg(long, default_value = "all")]
        threats: String,
        #[arg(long)]
        pos_db: Option<PathBuf>,
        /// Scenario the trace came from; supplies incidents and page targets.
        #[arg(long)]
        scenario: Option<PathBuf>,
        /// SCANNER:TICK, repeatable.
        #[arg(long)]
        incident: Vec<String>,
        #[arg(long, default_value_t = 300)]
        incident_window: Tick,
        #[arg(long)]
        page_target: Vec<DeviceId>,
        #[arg(long, default_value_t = 300)]
        merge_gap: Tick,
        #[arg(long, default_value_t = 600)]
        link_epoch: Tick,
        #[arg(long)]
        oui: Option<PathBuf>,
        #[arg(long)]
        values: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Re-run a scenario under each defense and tabulate attack metrics.
    DefenseMatrix {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "all")]
        defenses: String,
        #[arg(long)]
        oui: Option<PathBuf>,
        #[arg(long)]
        values: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Hashed sighting store queries.
    Csi {
        #[command(subcommand)]
        command: csi_cmd::CsiCommand,
    },
}

#[derive(Debug)]
pub enum Failure {
    Usage(anyhow::Error),
    Invariant(anyhow::Error),
}

pub trait FailureExt<T> {
    fn usage(self) -> Result<T, Failure>;
    fn invariant(self) -> Result<T, Failure>;
}

impl<T, E: Into<anyhow::Error>> FailureExt<T> for Result<T, E> {
    fn usage(self) -> Result<T, Failure> {
        self.map_err(|e| Failure::Usage(e.into()))
    }

    fn invariant(self) -> Result<T, Failure> {
        self.map_err(|e| Failure::Invariant(e.into()))
    }
}

pub fn read_text(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display())).usage()
}

fn tables(oui: Option<&Path>, values: Option<&Path>) -> Result<(OuiTable, ValueTable), Failure> {
    let oui_text = oui.map(read_text).transpose()?;
    let values_text = values.map(read_text).transpose()?;
    let oui = OuiTable::parse(oui_text.as_deref().unwrap_or(DEFAULT_OUI)).context("manufacturer table").usage()?;
    let values = ValueTable::parse(values_text.as_deref().unwrap_or(DEFAULT_VALUES)).context("value table").usage()?;
    Ok((oui, values))
}

fn scenario_with_seed(path: &Path, seed: Option<u64>) -> Result<ScenarioConfig, Failure> {
    let mut config = load_scenario(path).usage()?;
    if let Some(seed) = seed {
        config.seed = seed;
    }
    Ok(config)
}

fn parse_incident(text: &str, window: Tick) -> Result<IncidentQuery, Failure> {
    let (scanner, tick) = text
        .rsplit_once(':')
        .ok_or_else(|| anyhow!("incident {text:?} is not SCANNER:TICK"))
        .usage()?;
    let tick = tick.parse().with_context(|| format!("incident tick in {text:?}")).usage()?;
    Ok(IncidentQuery { scanner_id: scanner.to_owned(), tick, window })
}

fn simulate(scenario: &Path, seed: Option<u64>, out: &Path) -> Result<(), Failure> {
    let config = scenario_with_seed(scenario, seed)?;
    let result = run(&config, config.seed).usage()?;
    result.world.check_conservation().map_err(|e| anyhow!(e)).invariant()?;
    let bundle = result.bundle;

    let mut dir = OutDir::create(out).usage()?;
    dir.stage("trace.jsonl", bundle.to_jsonl()).invariant()?;
    dir.stage("pos.tsv", point_of_sale_database(&bundle.truth).to_tsv()).invariant()?;
    let mut manifest = RunManifest::new("simulate", out);
    manifest.scenario = Some(scenario.display().to_string());
    manifest.seed = Some(config.seed);
    manifest.config_digest = bundle.config_digest.clone();
    dir.finish(manifest).invariant()
}

#[allow(clippy::too_many_arguments)]
fn attack(
    trace: &Path,
    threats: &str,
    pos_db: Option<&Path>,
    scenario: Option<&Path>,
    incidents: &[String],
    incident_window: Tick,
    page_targets: &[DeviceId],
    merge_gap: Tick,
    link_epoch: Tick,
    oui: Option<&Path>,
    values: Option<&Path>,
    out: &Path,
) -> Result<(), Failure> {
    let threats = parse_threats(threats).usage()?;
    let bundle = TraceBundle::parse_jsonl(&read_text(trace)?).with_context(|| format!("parsing {}", trace.display())).usage()?;
    let pos = match pos_db {
        Some(p) => Some(PosDatabase::parse_tsv(&read_text(p)?).with_context(|| format!("parsing {}", p.display())).usage()?),
        None => None,
    };
    let (oui, values) = tables(oui, values)?;
    let mut params = AttackParams { merge_gap, link_epoch, oui, values, page_targets: page_targets.to_vec(), ..Default::default() };
    for text in incidents {
        params.incidents.push(parse_incident(text, incident_window)?);
    }
    if let Some(path) = scenario {
        let config = load_scenario(path).usage()?;
        side_inputs(&config, &mut params);
    }

    let (reports, outputs) = run_attacks(&bundle.without_truth(), &threats, &params, pos.as_ref());
    let mut dir = OutDir::create(out).usage()?;
    dir.stage("reports.jsonl", reports_to_jsonl(&reports)).invariant()?;
    if bundle.has_truth() {
        let metrics = evaluate_against_truth(&outputs, &bundle).invariant()?;
        dir.stage("metrics.csv", metrics.to_csv()).invariant()?;
    }
    let mut manifest = RunManifest::new("attack", out);
    manifest.scenario = scenario.map(|p| p.display().to_string());
    manifest.seed = bundle.seed;
    manifest.config_digest = bundle.config_digest.clone();
    dir.finish(manifest).invariant()
}

fn matrix(
    scenario: &Path,
    seed: Option<u64>,
    defenses: &str,
    oui: Option<&Path>,
    values: Option<&Path>,
    out: &Path,
) -> Result<(), Failure> {
    let defenses = parse_defenses(defenses).usage()?;
    let config = scenario_with_seed(scenario, seed)?;
    let (oui, values) = tables(oui, values)?;
    let params = AttackParams { oui, values, ..Default::default() };
    let grid = defense_matrix(&config, config.seed, &defenses, &params).usage()?;

    let mut dir = OutDir::create(out).usage()?;
    dir.stage("matrix.csv", grid.to_csv()).invariant()?;
    let mut json = serde_json::to_string_pretty(&grid).invariant()?;
    json.push('\n');
    dir.stage("matrix.json", json).invariant()?;
    let mut manifest = RunManifest::new("defense-matrix", out);
    manifest.scenario = Some(scenario.display().to_string());
    manifest.seed = Some(config.seed);
    manifest.config_digest = Some(config.digest());
    dir.finish(manifest).invariant()
}

fn schema() -> serde_json::Value {
    let mut schema = bluetrail::trace::line_schema();
    let extra = serde_json::json!({
        "presence": {"scanner_id": "string", "from": "integer", "until": "integer", "digest": "16 hex chars"},
        "match": {"candidate_digest": "16 hex chars", "rows": ["hashed-sighting"]},
        "role": {"digest": "16 hex chars", "label": "FixedSiteFrequenter | NocturnalRover | Transient | Unclassified",
                 "n_sightings": "integer", "n_distinct_scanners": "integer", "night_fraction": "number",
                 "hour_histogram": ["integer; 24 entries"]},
        "manifest": {"command": "string", "scenario": "path or null", "seed": "integer or null", "out": "path",
                     "tool_version": "string", "config_digest": "string or null", "arguments": ["string"],
                     "outputs": ["file name"]}
    });
    if let (Some(base), serde_json::Value::Object(more)) = (schema.as_object_mut(), extra) {
        base.extend(more);
    }
    schema
}

fn dispatch(cli: Cli) -> Result<(), Failure> {
    if cli.print_schema {
        println!("{}", serde_json::to_string_pretty(&schema()).invariant()?);
        return Ok(());
    }
    let Some(command) = cli.command else {
        return Err(Failure::Usage(anyhow!("no command given; see --help")));
    };
    match command {
        Command::Simulate { scenario, seed, out } => simulate(&scenario, seed, &out),
        Command::Attack {
            trace,
            threats,
            pos_db,
            scenario,
            incident,
            incident_window,
            page_target,
            merge_gap,
            link_epoch,
            oui,
            values,
            out,
        } => attack(
            &trace,
            &threats,
            pos_db.as_deref(),
            scenario.as_deref(),
            &incident,
            incident_window,
            &page_target,
            merge_gap,
            link_epoch,
            oui.as_deref(),
            values.as_deref(),
            &out,
        ),
        Command::DefenseMatrix { scenario, seed, defenses, oui, values, out } => {
            matrix(&scenario, seed, &defenses, oui.as_deref(), values.as_deref(), &out)
        }
        Command::Csi { command } => csi_cmd::run(command),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Invariant(e)) => {
            eprintln!("internal error: {e:#}");
            ExitCode::from(3)
        }
    }
}
