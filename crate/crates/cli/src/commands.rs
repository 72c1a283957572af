use std::fs;
use std::path::{Path, PathBuf};

use hedonic::clustering::{elbow_curve, kmeans_fit, knee_by_chord, tree_cluster_fit, KMeansConfig, KnnBinModel};
use hedonic::evalkit::{compare_approaches, mae};
use hedonic::geo::{geocode, load_lookup};
use hedonic::pipeline::{fit_pipeline, Approach, HierarchicalModel, ModelKind};
use hedonic::synth::{default_benchmark_spec, eight_blob_table, generate, BENCHMARK_ROWS};
use hedonic::tabular::{
    default_schema, encode, impute, load_csv_with, names, save_schema, write_csv, ColumnKind, ColumnSpec,
    CsvOptions, Imputer, Table,
};
use ndarray::Array2;

use crate::config::RunConfig;
use crate::error::{CliError, Result};
use crate::{Algorithm, Cli, ClusterMapArgs, Command, ElbowArgs, ExplainArgs, PredictArgs, Preset, SynthArgs};

const SYNTH_DEFAULT_SEED: u64 = 42;
const EIGHT_BLOB_PER_BLOB: usize = 200;

pub fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Train => train(cli),
        Command::Evaluate => evaluate(cli),
        Command::Predict(a) => predict(cli, a),
        Command::Explain(a) => explain(cli, a),
        Command::Elbow(a) => elbow(cli, a),
        Command::ClusterMap(a) => cluster_map(cli, a),
        Command::Synth(a) => synth(cli, a),
    }
}

fn run_config(cli: &Cli) -> Result<RunConfig> {
    let path = cli
        .config
        .as_deref()
        .ok_or_else(|| CliError::Config("this command needs --config".into()))?;
    let mut rc = RunConfig::load(path)?;
    if let Some(s) = cli.seed {
        rc.seed = s;
    }
    Ok(rc)
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::Internal(format!("creating {}: {e}", dir.display())))?;
    }
    fs::write(path, bytes).map_err(|e| CliError::Internal(format!("writing {}: {e}", path.display())))
}

/// Writes to `path`, or to standard output when there is none.
fn emit(path: Option<&Path>, bytes: &[u8]) -> Result<()> {
    match path {
        Some(p) => write_file(p, bytes),
        None => {
            use std::io::Write;
            match std::io::stdout().write_all(bytes) {
                // a closed reader (e.g. `| head`) is not a failure
                Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => Ok(()),
                r => r.map_err(|e| CliError::Internal(format!("writing output: {e}"))),
            }
        }
    }
}

fn csv_bytes(header: &[String], rows: impl IntoIterator<Item = Vec<String>>) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    w.into_inner()
        .map_err(|e| CliError::Internal(format!("writing csv: {e}")))
}

fn header(names: &[&str]) -> Vec<String> {
    names.iter().map(|s| s.to_string()).collect()
}

fn target_values(t: &Table) -> Result<Vec<f64>> {
    let j = t.require_target()?;
    (0..t.len())
        .map(|i| {
            t.cell(i, j)
                .as_num()
                .ok_or_else(|| CliError::Data(format!("row {}: target is missing", t.row_ids()[i])))
        })
        .collect()
}

fn train(cli: &Cli) -> Result<()> {
    let rc = run_config(cli)?;
    let out = cli
        .out
        .clone()
        .or_else(|| rc.model.clone())
        .ok_or_else(|| CliError::Config("no model path: pass --out or set \"model\" in the config".into()))?;
    let t = rc.load_table()?;
    let model = fit_pipeline(&t, &rc.pipeline())?;
    write_file(&out, model.to_json()?.as_bytes())?;

    let pred: Vec<f64> = model.predict_table(&t)?.into_iter().map(|(_, p)| p).collect();
    let train_mae = mae(&pred, &target_values(&t)?).map_err(|e| CliError::Internal(e.to_string()))?;
    println!("model: {}", out.display());
    println!("segments: {}", model.segments.len());
    for (i, s) in model.segments.iter().enumerate() {
        let kind = if s.is_parent { "parent" } else { "own" };
        println!(
            "segment {i}: stage1 {} rows {} fit_rows {} {kind}",
            s.stage1, s.n_rows, s.n_fit_rows
        );
    }
    println!("training MAE: {train_mae:.2} EUR");
    Ok(())
}

fn evaluate(cli: &Cli) -> Result<()> {
    let rc = run_config(cli)?;
    let t = rc.load_table()?;
    let cmp = compare_approaches(&t, &rc.pipeline(), rc.folds, rc.seed)?;
    let out = cli.out.clone().or_else(|| rc.report.clone());
    emit(out.as_deref(), cmp.to_csv().as_bytes())?;
    for kind in ModelKind::ALL {
        for approach in Approach::ALL {
            if let Some(c) = cmp.cell(kind, approach) {
                eprintln!(
                    "{} {}: MAE {:.2} RMSE {:.2}",
                    kind.as_str(),
                    approach.as_str(),
                    c.report.mae_eur,
                    c.report.rmse_eur
                );
            }
        }
    }
    Ok(())
}

fn load_model(path: &Path) -> Result<HierarchicalModel> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read model {}: {e}", path.display())))?;
    HierarchicalModel::from_json(&text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

/// Loads listings to score against the model's training schema. A target
/// column is optional and extra columns are ignored. With a lookup, the
/// coordinates come from postal codes and unknown codes are errors.
fn load_input(m: &HierarchicalModel, input: &Path, lookup: Option<&Path>) -> Result<Table> {
    if !input.is_file() {
        return Err(CliError::Config(format!("input {} does not exist", input.display())));
    }
    let opts = CsvOptions {
        require_target: false,
        allow_extra_columns: true,
    };
    let is_coord = |c: &ColumnSpec| c.name == names::LATITUDE || c.name == names::LONGITUDE;
    match lookup {
        Some(path) if m.schema.iter().any(is_coord) => {
            let raw: Vec<ColumnSpec> = m.schema.iter().filter(|c| !is_coord(c)).cloned().collect();
            let t = load_csv_with(input, &raw, opts)?;
            let g = load_lookup(path)?;
            let (geo, tally) = geocode(&g, &t)?;
            if tally.dropped_unknown > 0 {
                let kept: std::collections::HashSet<u64> = geo.row_ids().iter().copied().collect();
                let first = t.row_ids().iter().find(|id| !kept.contains(id)).copied().unwrap_or_default();
                return Err(CliError::Data(format!(
                    "row {first}: postal code missing or not in the lookup ({} rows affected)",
                    tally.dropped_unknown
                )));
            }
            Ok(geo)
        }
        _ => Ok(load_csv_with(input, &m.schema, opts)?),
    }
}

fn predict(cli: &Cli, a: &PredictArgs) -> Result<()> {
    let m = load_model(&a.model)?;
    let t = load_input(&m, &a.input, a.geo_lookup.as_deref())?;
    let routed = m.predict_table(&t)?;
    let rows = t.row_ids().iter().zip(&routed).map(|(id, (r, p))| {
        vec![id.to_string(), r.segment.to_string(), r.stage1.to_string(), p.to_string()]
    });
    let bytes = csv_bytes(&header(&["row_id", "segment", "stage1", "price_eur"]), rows)?;
    emit(cli.out.as_deref(), &bytes)
}

fn explain(cli: &Cli, a: &ExplainArgs) -> Result<()> {
    let m = load_model(&a.model)?;
    if let Some(feature) = &a.feature {
        let segments: Vec<usize> = if a.segments.is_empty() {
            (0..m.segments.len()).collect()
        } else {
            a.segments.clone()
        };
        let shapes = m.compare_shapes(feature, &segments)?;
        let rows = shapes.iter().flat_map(|s| {
            s.bins.iter().enumerate().map(move |(b, bin)| {
                vec![
                    s.segment.to_string(),
                    s.stage1.to_string(),
                    b.to_string(),
                    bin.bin_lower.to_string(),
                    bin.bin_upper.to_string(),
                    bin.contribution_eur.to_string(),
                    bin.count.to_string(),
                ]
            })
        });
        let h = header(&["segment", "stage1", "bin", "bin_lower", "bin_upper", "contribution_eur", "count"]);
        return emit(cli.out.as_deref(), &csv_bytes(&h, rows)?);
    }
    let input = a
        .input
        .as_deref()
        .ok_or_else(|| CliError::Config("explain needs --input, or --feature for shape export".into()))?;
    let t = load_input(&m, input, a.geo_lookup.as_deref())?;
    let explanations = m.explain_table(&t)?;
    let mut h = header(&["row_id", "segment", "stage1", "merged", "intercept"]);
    h.extend(m.column_names());
    h.push("price_eur".into());
    let rows = t.row_ids().iter().zip(&explanations).map(|(id, e)| {
        let mut r = vec![
            id.to_string(),
            e.route.segment.to_string(),
            e.route.stage1.to_string(),
            e.route.merged.to_string(),
            e.intercept.to_string(),
        ];
        r.extend(e.contributions.iter().map(|c| c.to_string()));
        r.push(e.price.to_string());
        r
    });
    emit(cli.out.as_deref(), &csv_bytes(&h, rows)?)
}

/// Imputes when the table carries the listing columns, then encodes.
fn encoded(t: &Table) -> Result<hedonic::tabular::EncodedMatrix> {
    let t = if Imputer::applicable(t.schema()) { impute(t)? } else { t.clone() };
    Ok(encode(&t)?)
}

fn elbow(cli: &Cli, a: &ElbowArgs) -> Result<()> {
    let rc = run_config(cli)?;
    let t = rc.load_table()?;
    let x = encoded(&t)?;
    let target = t.schema()[t.require_target()?].name.clone();
    let columns: Vec<String> = if !a.columns.is_empty() {
        a.columns.clone()
    } else if x.column_index(names::LATITUDE).is_some() {
        vec![names::LATITUDE.into(), names::LONGITUDE.into(), target.clone()]
    } else {
        x.columns
            .iter()
            .filter(|c| c.source.kind == ColumnKind::Numeric)
            .map(|c| c.name.clone())
            .collect()
    };
    let mut m = Array2::zeros((x.n_rows(), columns.len()));
    for (k, c) in columns.iter().enumerate() {
        if *c == target {
            m.column_mut(k).assign(&x.target);
        } else {
            let j = x
                .column_index(c)
                .ok_or_else(|| CliError::Config(format!("unknown column \"{c}\"")))?;
            m.column_mut(k).assign(&x.values.column(j));
        }
    }
    if m.iter().any(|v: &f64| !v.is_finite()) {
        return Err(CliError::Data("elbow columns contain missing values".into()));
    }
    let curve = elbow_curve(m.view(), a.k_min, a.k_max, a.restarts, rc.seed)?;
    let rows = curve.iter().map(|(k, w)| vec![k.to_string(), w.to_string()]);
    emit(cli.out.as_deref(), &csv_bytes(&header(&["k", "wcss"]), rows)?)?;
    if let Some(k) = knee_by_chord(&curve) {
        eprintln!("knee: k={k} (largest distance below the chord)");
    }
    Ok(())
}

fn location_price(t: &Table) -> Result<Vec<[f64; 3]>> {
    let lat = t.require_column(names::LATITUDE)?;
    let lon = t.require_column(names::LONGITUDE)?;
    let price = t.require_target()?;
    (0..t.len())
        .map(|i| {
            let get = |j: usize| {
                t.cell(i, j).as_num().ok_or_else(|| {
                    CliError::Data(format!("row {}: column \"{}\" is missing", t.row_ids()[i], t.schema()[j].name))
                })
            };
            Ok([get(lat)?, get(lon)?, get(price)?])
        })
        .collect()
}

fn cluster_map(cli: &Cli, a: &ClusterMapArgs) -> Result<()> {
    let rc = run_config(cli)?;
    let t = rc.load_table()?;
    let pts = location_price(&t)?;
    let labels: Vec<usize> = match a.algorithm {
        Algorithm::Kmeans => {
            let x = Array2::from_shape_fn((pts.len(), 3), |(i, j)| pts[i][j]);
            let cols = header(&[names::LATITUDE, names::LONGITUDE, names::PRICE]);
            let cfg = KMeansConfig {
                k: a.k,
                restarts: rc.stage1.restarts,
                seed: rc.seed,
                ..KMeansConfig::default()
            };
            kmeans_fit(x.view(), &cols, &cfg)?.labels
        }
        Algorithm::KnnBin => {
            let m = KnnBinModel::fit(&pts, a.neighbors, a.bins)?;
            pts.iter().map(|p| m.assign(p[0], p[1])).collect()
        }
        Algorithm::Tree => {
            let x = Array2::from_shape_fn((pts.len(), 2), |(i, j)| pts[i][j]);
            let y: Vec<f64> = pts.iter().map(|p| p[2]).collect();
            let cols = header(&[names::LATITUDE, names::LONGITUDE]);
            let tree = tree_cluster_fit(x.view(), &cols, &y, a.depth, a.min_leaf)?;
            let threshold = a
                .leaf_threshold
                .unwrap_or_else(|| y.iter().sum::<f64>() / y.len() as f64);
            let leaves = tree.leaves();
            x.rows()
                .into_iter()
                .map(|r| Ok(usize::from(leaves[tree.assign(&r.to_vec())?].1 > threshold)))
                .collect::<Result<Vec<_>>>()?
        }
    };
    let rows = pts
        .iter()
        .zip(&labels)
        .map(|(p, l)| vec![p[0].to_string(), p[1].to_string(), l.to_string()]);
    emit(cli.out.as_deref(), &csv_bytes(&header(&["lat", "lon", "cluster"]), rows)?)
}

fn synth(cli: &Cli, a: &SynthArgs) -> Result<()> {
    let dir: PathBuf = cli
        .out
        .clone()
        .ok_or_else(|| CliError::Config("synth needs --out <directory>".into()))?;
    let seed = cli.seed.unwrap_or(SYNTH_DEFAULT_SEED);
    let mut table_csv = Vec::new();
    let labels = match a.preset {
        Preset::Benchmark => {
            let rows = a.rows.unwrap_or(BENCHMARK_ROWS);
            if rows == 0 {
                return Err(CliError::Config("--rows must be at least 1".into()));
            }
            let market = generate(&default_benchmark_spec(), rows, seed)?;
            write_csv(&market.table, &mut table_csv)?;
            let mut lookup = Vec::new();
            market.lookup.write_csv(&mut lookup)?;
            let label_rows = market.table.row_ids().iter().zip(&market.labels).map(|(id, l)| {
                vec![id.to_string(), l.blob.to_string(), l.regime.to_string(), l.flat(2).to_string()]
            });
            let labels = csv_bytes(&header(&["row_id", "blob", "regime", "segment"]), label_rows)?;
            write_file(&dir.join("listings.csv"), &table_csv)?;
            write_file(&dir.join("lookup.csv"), &lookup)?;
            save_schema(&default_schema(), &dir.join("schema.json"))?;

            let mut rc = RunConfig::new("listings.csv".into());
            rc.schema = Some("schema.json".into());
            rc.geo_lookup = Some("lookup.csv".into());
            rc.model = Some("model.json".into());
            rc.report = Some("report.csv".into());
            rc.seed = seed;
            write_file(&dir.join("config.json"), rc.to_json().as_bytes())?;
            // One stage-2 split per city matches the two latent regimes.
            rc.stage2.k = 2;
            write_file(&dir.join("train_config.json"), rc.to_json().as_bytes())?;
            labels
        }
        Preset::EightBlobs => {
            let per_blob = a.rows.unwrap_or(EIGHT_BLOB_PER_BLOB);
            if per_blob == 0 {
                return Err(CliError::Config("--rows must be at least 1".into()));
            }
            let (t, blob) = eight_blob_table(per_blob, seed);
            write_csv(&t, &mut table_csv)?;
            let label_rows = t
                .row_ids()
                .iter()
                .zip(&blob)
                .map(|(id, b)| vec![id.to_string(), b.to_string()]);
            let labels = csv_bytes(&header(&["row_id", "blob"]), label_rows)?;
            write_file(&dir.join("blobs.csv"), &table_csv)?;
            save_schema(t.schema(), &dir.join("schema.json"))?;
            let mut rc = RunConfig::new("blobs.csv".into());
            rc.schema = Some("schema.json".into());
            rc.seed = seed;
            write_file(&dir.join("config.json"), rc.to_json().as_bytes())?;
            labels
        }
    };
    write_file(&dir.join("labels.csv"), &labels)?;
    eprintln!("wrote synthetic data to {}", dir.display());
    Ok(())
}
