use std::collections::HashMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use meshgrade::eval::{
    pr_curve, render_table, run_crossval, threshold_grid, threshold_rows, write_predictions_csv,
    CrossvalConfig, CrossvalReport, PrPoint, ThresholdRow, DEFAULT_GRID_POINTS, REPORT_THRESHOLDS,
};
use meshgrade::features::{build_dataset, featurize_mesh, FeatureConfig, LabelledMesh};
use meshgrade::graph::NeighbourhoodGraph;
use meshgrade::mesh::{parse_mesh, serialize_mesh, validate_document, ElementId, LabelSet, Mesh};
use meshgrade::metrics::compute_property_table;
use meshgrade::models::{apply_threshold, load_model_file, save_model, Model, ModelFile, ModelKind};
use meshgrade::obj::import_obj;
use meshgrade::synth::{
    self, DefectKind, DefectSpec, Manifest, ManifestEntry, Surface, SynthSpec, MANIFEST_FORMAT_TAG,
};
use meshgrade::PredictionRecord;
use serde::Serialize;

use crate::{Command, Inputs, ReportArgs, Settings, SynthArgs};

pub(crate) fn dispatch(command: Command, s: &Settings) -> Result<()> {
    match command {
        Command::Convert { input, out } => convert(&input, out.as_deref(), s),
        Command::Validate { input, out } => validate(&input, out.as_deref(), s),
        Command::Metrics { input, out } => metrics(&input, out.as_deref(), s),
        Command::Featurize { inputs, features, out } => {
            featurize(&inputs, &s.features(&features)?, out.as_deref(), s)
        }
        Command::Train {
            inputs,
            features,
            model,
            out,
        } => {
            let meshes = labelled(load_inputs(&inputs)?)?;
            let features = s.features(&features)?;
            let config = s.train(&model)?;
            let data = build_dataset(&meshes, &features)?;
            eprintln!(
                "training {} on {} elements from {} meshes",
                config.kind.name(),
                data.len(),
                meshes.len()
            );
            let model = Model::train(&data, &config)?;
            let text = save_model(&ModelFile::new(features, model));
            emit(s, out.as_deref(), text.as_bytes())
        }
        Command::Predict {
            input,
            model_file,
            threshold,
            out,
            labelled_out,
        } => predict(&input, &model_file, s.threshold(threshold)?, out.as_deref(), labelled_out.as_deref(), s),
        Command::Evaluate {
            inputs,
            model_file,
            report,
        } => evaluate(&inputs, &model_file, &report, s),
        Command::Crossval {
            inputs,
            features,
            model,
            folds,
            report,
        } => {
            let config = CrossvalConfig {
                folds: folds.or(s.file.folds).unwrap_or(10),
                seed: s.seed,
                features: s.features(&features)?,
                train: s.train(&model)?,
            };
            crossval(&inputs, &config, &report, s)
        }
        Command::Synth(args) => synthesize(&args, s),
        Command::ExportViz {
            input,
            model_file,
            predictions,
            mesh_id,
            threshold,
            out,
        } => export_viz(
            &input,
            model_file.as_deref(),
            predictions.as_deref(),
            mesh_id,
            s.threshold(threshold)?,
            out.as_deref(),
            s,
        ),
    }
}

/// Writes `bytes` to `out` and, with `--stdout`, to stdout.
fn emit(s: &Settings, out: Option<&Path>, bytes: &[u8]) -> Result<()> {
    if out.is_none() && !s.stdout {
        bail!("no output selected: pass --out or --stdout");
    }
    if let Some(path) = out {
        std::fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))?;
        eprintln!("wrote {}", path.display());
    }
    if s.stdout {
        std::io::stdout().write_all(bytes)?;
    }
    Ok(())
}

fn write_optional(path: Option<&Path>, bytes: &[u8]) -> Result<()> {
    if let Some(path) = path {
        std::fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))?;
        eprintln!("wrote {}", path.display());
    }
    Ok(())
}

fn read_mesh(path: &Path) -> Result<(Mesh, Option<LabelSet>)> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    parse_mesh(&text).with_context(|| format!("loading {}", path.display()))
}

fn stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

struct Loaded {
    id: String,
    mesh: Mesh,
    labels: Option<LabelSet>,
}

fn load_inputs(inputs: &Inputs) -> Result<Vec<Loaded>> {
    let mut files: Vec<(String, PathBuf)> = inputs.meshes.iter().map(|p| (stem(p), p.clone())).collect();
    if let Some(path) = &inputs.manifest {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let manifest: Manifest =
            serde_json::from_str(&text).with_context(|| format!("parsing manifest {}", path.display()))?;
        if manifest.format != MANIFEST_FORMAT_TAG {
            bail!("unsupported manifest version {:?}", manifest.format);
        }
        let dir = path.parent().unwrap_or(Path::new("."));
        files.extend(manifest.meshes.into_iter().map(|m| (m.id, dir.join(m.file))));
    }
    if files.is_empty() {
        bail!("no input meshes: pass mesh files or --manifest");
    }
    files
        .into_iter()
        .map(|(id, path)| {
            let (mesh, labels) = read_mesh(&path)?;
            Ok(Loaded { id, mesh, labels })
        })
        .collect()
}

fn labelled(meshes: Vec<Loaded>) -> Result<Vec<LabelledMesh>> {
    meshes
        .into_iter()
        .map(|m| {
            let labels = m.labels.with_context(|| format!("mesh {} has no labels", m.id))?;
            Ok(LabelledMesh {
                id: m.id,
                mesh: m.mesh,
                labels,
            })
        })
        .collect()
}

fn convert(input: &Path, out: Option<&Path>, s: &Settings) -> Result<()> {
    let text = std::fs::read_to_string(input).with_context(|| format!("reading {}", input.display()))?;
    let mesh = import_obj(&text).with_context(|| format!("importing {}", input.display()))?;
    eprintln!("{} nodes, {} elements", mesh.nodes().len(), mesh.len());
    emit(s, out, serialize_mesh(&mesh, None).as_bytes())
}

fn validate(input: &Path, out: Option<&Path>, s: &Settings) -> Result<()> {
    let text = std::fs::read_to_string(input).with_context(|| format!("reading {}", input.display()))?;
    let report = validate_document(&text).with_context(|| format!("loading {}", input.display()))?;
    let mut lines = String::new();
    for f in &report.findings {
        lines.push_str(&serde_json::json!({ "invariant": f.invariant(), "finding": f.to_string() }).to_string());
        lines.push('\n');
    }
    if out.is_some() || s.stdout {
        emit(s, out, lines.as_bytes())?;
    }
    if let Some(first) = report.findings.first() {
        bail!("{} finding(s), first: {first}", report.findings.len());
    }
    // labels are only checked once the structure is valid
    parse_mesh(&text)?;
    eprintln!("{}: valid", input.display());
    Ok(())
}

fn metrics(input: &Path, out: Option<&Path>, s: &Settings) -> Result<()> {
    let (mesh, _) = read_mesh(input)?;
    let graph = NeighbourhoodGraph::build(&mesh);
    let table = compute_property_table(&mesh, &graph)?;
    let mut csv = Vec::new();
    table.write_csv(&mut csv)?;
    emit(s, out, &csv)
}

fn featurize(inputs: &Inputs, config: &FeatureConfig, out: Option<&Path>, s: &Settings) -> Result<()> {
    let meshes = load_inputs(inputs)?;
    let with_labels = meshes.iter().all(|m| m.labels.is_some());
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["mesh_id".to_string(), "element_id".to_string()];
    header.extend(config.column_names());
    if with_labels {
        header.push("label".into());
    }
    w.write_record(&header)?;
    for m in &meshes {
        let features = featurize_mesh(&m.mesh, config).with_context(|| format!("mesh {}", m.id))?;
        for (i, id) in features.ids.iter().enumerate() {
            let mut record = vec![m.id.clone(), id.to_string()];
            record.extend(features.row(i).iter().map(|v| v.to_string()));
            if let Some(labels) = &m.labels {
                let label = labels.get(*id).with_context(|| format!("mesh {}: element {id} unlabelled", m.id))?;
                record.push(label.as_str().to_string());
            }
            w.write_record(&record)?;
        }
    }
    emit(s, out, &w.into_inner()?)
}

/// Probabilities for every element of `mesh`, in element order.
fn predict_mesh(file: &ModelFile, mesh: &Mesh) -> Result<Vec<f64>> {
    let features = featurize_mesh(mesh, &file.features)?;
    Ok(file.model.predict_many(&features.values)?)
}

fn predict(
    input: &Path,
    model_file: &Path,
    threshold: f64,
    out: Option<&Path>,
    labelled_out: Option<&Path>,
    s: &Settings,
) -> Result<()> {
    let file = load_model_file(model_file).with_context(|| format!("loading {}", model_file.display()))?;
    let (mesh, _) = read_mesh(input)?;
    let probs = predict_mesh(&file, &mesh)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["element_id", "probability", "label"])?;
    let mut labels = LabelSet::new();
    for (e, p) in mesh.elements().iter().zip(&probs) {
        let label = apply_threshold(*p, threshold);
        labels.insert(e.id, label);
        w.write_record([e.id.to_string(), p.to_string(), label.as_str().to_string()])?;
    }
    eprintln!("{} of {} elements predicted rework", labels.rework_count(), mesh.len());
    write_optional(labelled_out, serialize_mesh(&mesh, Some(&labels)).as_bytes())?;
    emit(s, out, &w.into_inner()?)
}

#[derive(Serialize)]
struct EvaluationReport {
    model: ModelKind,
    features: FeatureConfig,
    meshes: usize,
    elements: usize,
    rework_share: f64,
    rows: Vec<ThresholdRow>,
    best_f1: Option<PrPoint>,
}

fn report_thresholds(args: &ReportArgs, s: &Settings) -> Result<Vec<f64>> {
    let ts = args
        .thresholds
        .clone()
        .or_else(|| s.file.thresholds.clone())
        .unwrap_or_else(|| REPORT_THRESHOLDS.to_vec());
    if let Some(t) = ts.iter().find(|t| !(0.0..=1.0).contains(*t)) {
        bail!("threshold {t} outside [0, 1]");
    }
    Ok(ts)
}

/// Writes the JSON report, table, curve and prediction exports.
fn write_report(
    args: &ReportArgs,
    s: &Settings,
    json: String,
    title: &str,
    rows: &[ThresholdRow],
    records: &[PredictionRecord],
) -> Result<()> {
    let grid = args.grid.or(s.file.grid).unwrap_or(DEFAULT_GRID_POINTS);
    if grid < 2 {
        bail!("curve grid needs at least 2 points");
    }
    let curve = pr_curve(records, &threshold_grid(grid))?;
    if args.curve.is_some() {
        let mut csv = Vec::new();
        curve.write_csv(&mut csv)?;
        write_optional(args.curve.as_deref(), &csv)?;
    }
    if args.predictions.is_some() {
        let mut csv = Vec::new();
        write_predictions_csv(records, &mut csv)?;
        write_optional(args.predictions.as_deref(), &csv)?;
    }
    let table = render_table(title, rows);
    write_optional(args.table.as_deref(), table.as_bytes())?;
    eprint!("{table}");
    if args.out.is_some() || s.stdout {
        emit(s, args.out.as_deref(), json.as_bytes())?;
    }
    Ok(())
}

fn evaluate(inputs: &Inputs, model_file: &Path, args: &ReportArgs, s: &Settings) -> Result<()> {
    let file = load_model_file(model_file).with_context(|| format!("loading {}", model_file.display()))?;
    let meshes = labelled(load_inputs(inputs)?)?;
    let data = build_dataset(&meshes, &file.features)?;
    let probs = file.model.predict_many(data.values())?;
    let records: Vec<PredictionRecord> = probs
        .into_iter()
        .enumerate()
        .map(|(i, probability)| PredictionRecord {
            mesh_id: data.mesh_id(i).to_owned(),
            element_id: data.element(i),
            probability,
            ground_truth: data.label(i),
            fold: 0,
        })
        .collect();
    let rows = threshold_rows(&records, &report_thresholds(args, s)?)?;
    let best = pr_curve(&records, &threshold_grid(DEFAULT_GRID_POINTS))?.best_f1();
    let report = EvaluationReport {
        model: file.model.kind(),
        features: file.features.clone(),
        meshes: meshes.len(),
        elements: records.len(),
        rework_share: data.rework_share(),
        rows: rows.clone(),
        best_f1: best.map(|(p, _)| p),
    };
    let json = serde_json::to_string_pretty(&report)? + "\n";
    write_report(args, s, json, file.model.kind().name(), &rows, &records)
}

fn crossval(inputs: &Inputs, config: &CrossvalConfig, args: &ReportArgs, s: &Settings) -> Result<()> {
    let meshes = labelled(load_inputs(inputs)?)?;
    eprintln!(
        "{}-fold crossvalidation of {} over {} meshes",
        config.folds,
        config.train.kind.name(),
        meshes.len()
    );
    let result = run_crossval(&meshes, config)?;
    let report = CrossvalReport::new(config, &result, &report_thresholds(args, s)?)?;
    write_report(args, s, report.to_json(), config.train.kind.name(), &report.rows, &result.records)
}

fn parse_surface(text: &str) -> Result<Surface> {
    let (kind, value) = text.split_once(':').unwrap_or((text, ""));
    let number = || -> Result<f64> { value.parse().with_context(|| format!("surface {text:?} needs a number")) };
    Ok(match kind {
        "flat" => Surface::Flat,
        "cylinder" => Surface::CylinderBend { radius: number()? },
        "ridge" => Surface::Ridge { angle: number()? },
        _ => bail!("unknown surface {text:?}"),
    })
}

fn parse_defect(text: &str) -> Result<DefectSpec> {
    let parts: Vec<&str> = text.split(':').collect();
    let [kind, count, severity] = parts[..] else {
        bail!("defect {text:?} must be KIND:COUNT:SEVERITY");
    };
    let kind = match kind {
        "sliver" => DefectKind::Sliver,
        "skewed" => DefectKind::Skewed,
        "warped" => DefectKind::Warped,
        "shrunk" => DefectKind::Shrunk,
        "triangulated" => DefectKind::Triangulated,
        _ => bail!("unknown defect kind {kind:?}"),
    };
    Ok(DefectSpec {
        kind,
        count: count.parse().with_context(|| format!("defect count in {text:?}"))?,
        severity: severity.parse().with_context(|| format!("defect severity in {text:?}"))?,
    })
}

fn synthesize(args: &SynthArgs, s: &Settings) -> Result<()> {
    if args.bench {
        return synth_bench(args, s);
    }
    let f = &s.file;
    let defaults = SynthSpec::default();
    let surface = match args.surface.as_ref().or(f.surface.as_ref()) {
        Some(text) => parse_surface(text)?,
        None => defaults.surface,
    };
    let defect_texts = if args.defects.is_empty() {
        f.defects.clone().unwrap_or_default()
    } else {
        args.defects.clone()
    };
    let spec = SynthSpec {
        rows: args.rows.or(f.rows).unwrap_or(defaults.rows),
        cols: args.cols.or(f.cols).unwrap_or(defaults.cols),
        spacing: args.spacing.or(f.spacing).unwrap_or(defaults.spacing),
        surface,
        jitter: args.jitter.or(f.jitter).unwrap_or(defaults.jitter),
        defects: defect_texts.iter().map(|t| parse_defect(t)).collect::<Result<_>>()?,
        dilation: args.dilation.or(f.dilation).unwrap_or(defaults.dilation),
        seed: s.seed,
    };
    let result = synth::synthesize(&spec)?;
    eprintln!(
        "{} elements, {} defects, {} rework",
        result.mesh.len(),
        result.defects.len(),
        result.labels.rework_count()
    );
    emit(s, args.out.as_deref(), serialize_mesh(&result.mesh, Some(&result.labels)).as_bytes())
}

fn synth_bench(args: &SynthArgs, s: &Settings) -> Result<()> {
    let dir = args.out_dir.as_deref().context("--bench needs --out-dir")?;
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let specs = synth::synth_bench_specs(s.seed);
    let meshes = synth::synth_bench(s.seed)?;
    let mut entries = Vec::with_capacity(meshes.len());
    let (mut total, mut rework) = (0, 0);
    for (m, entry) in meshes.iter().zip(specs) {
        let file = format!("{}.json", m.id);
        std::fs::write(dir.join(&file), serialize_mesh(&m.mesh, Some(&m.labels)))?;
        total += m.mesh.len();
        rework += m.labels.rework_count();
        entries.push(ManifestEntry {
            id: m.id.clone(),
            file,
            elements: m.mesh.len(),
            rework: m.labels.rework_count(),
            spec: entry.spec,
        });
    }
    let manifest = Manifest {
        format: MANIFEST_FORMAT_TAG.to_owned(),
        seed: s.seed,
        meshes: entries,
    };
    let text = serde_json::to_string_pretty(&manifest)? + "\n";
    std::fs::write(dir.join("manifest.json"), &text)?;
    eprintln!(
        "{} meshes, {} elements, rework share {:.4} in {}",
        meshes.len(),
        total,
        rework as f64 / total as f64,
        dir.display()
    );
    if s.stdout {
        std::io::stdout().write_all(text.as_bytes())?;
    }
    Ok(())
}

fn probabilities_from_csv(path: &Path, mesh_id: &str, mesh: &Mesh) -> Result<Vec<f64>> {
    let mut reader = csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    let headers = reader.headers()?.clone();
    let column = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .with_context(|| format!("{} has no {name} column", path.display()))
    };
    let (mesh_col, element_col, prob_col) = (column("mesh_id")?, column("element_id")?, column("probability")?);
    let mut by_element: HashMap<ElementId, f64> = HashMap::new();
    for record in reader.records() {
        let record = record?;
        if &record[mesh_col] != mesh_id {
            continue;
        }
        let element: u64 = record[element_col].parse().context("element id")?;
        let p: f64 = record[prob_col].parse().context("probability")?;
        by_element.insert(ElementId(element), p);
    }
    mesh.elements()
        .iter()
        .map(|e| {
            by_element
                .get(&e.id)
                .copied()
                .with_context(|| format!("no prediction for mesh {mesh_id} element {}", e.id))
        })
        .collect()
}

fn export_viz(
    input: &Path,
    model_file: Option<&Path>,
    predictions: Option<&Path>,
    mesh_id: Option<String>,
    threshold: f64,
    out: Option<&Path>,
    s: &Settings,
) -> Result<()> {
    let (mesh, labels) = read_mesh(input)?;
    let probs = match (model_file, predictions) {
        (Some(path), _) => {
            let file = load_model_file(path).with_context(|| format!("loading {}", path.display()))?;
            predict_mesh(&file, &mesh)?
        }
        (None, Some(path)) => probabilities_from_csv(path, &mesh_id.unwrap_or_else(|| stem(input)), &mesh)?,
        (None, None) => bail!("export-viz needs --model-file or --predictions"),
    };
    let mut vtk = Vec::new();
    meshgrade::viz::write_vtk(&mesh, &probs, threshold, labels.as_ref(), &mut vtk)?;
    emit(s, out, &vtk)
}
