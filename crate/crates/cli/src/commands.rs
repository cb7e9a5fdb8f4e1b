use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use hashcont::checkpoint::Checkpoint;
use hashcont::codes::{read_codes, write_codes, BinaryCode};
use hashcont::config::{RunConfig, RunData};
use hashcont::continuation::Trainer;
use hashcont::encoder::forward;
use hashcont::eval::{
    code_histogram, default_n_values, evaluate, queries_from_index, ApDenominator, EvalOptions, Metric,
};
use hashcont::pairdata::{
    estimate_stats, generate_synthetic, read_features, write_features, Dataset, PairUniverse, SplitFractions,
    SyntheticSpec,
};
use hashcont::retrieval::{encode_dataset, lsh_encode, radius_query, rank, CodeIndex, Hit, IndexManifest};
use serde::Serialize;

use crate::{EncodeArgs, EvalArgs, HistogramArgs, QueryArgs, SplitArgs, SynthArgs, TrainArgs, OUT_ENV};

const DEFAULT_OUT: &str = "hashcont-out";
const DEFAULT_TOP_N: usize = 10;

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

fn load_features(path: &Path) -> Result<Dataset> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    read_features(BufReader::new(file)).with_context(|| format!("reading {}", path.display()))
}

fn save_features(path: &Path, data: &Dataset) -> Result<()> {
    write_features(create(path)?, data)?;
    Ok(())
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    let mut out = create(path)?;
    out.write_all(text.as_bytes())?;
    out.flush()?;
    Ok(())
}

pub fn synth(a: SynthArgs) -> Result<()> {
    let base = a.preset.map(|p| hashcont::config::Preset::from(p).spec(a.seed));
    let pick = |flag: Option<usize>, preset: Option<usize>, name: &str| {
        flag.or(preset)
            .with_context(|| format!("--{name} is required without --preset"))
    };
    let spec = SyntheticSpec {
        classes: pick(a.classes, base.as_ref().map(|b| b.classes), "classes")?,
        per_class: pick(a.per_class, base.as_ref().map(|b| b.per_class), "per-class")?,
        dim: pick(a.dim, base.as_ref().map(|b| b.dim), "dim")?,
        spread: a.spread.or(base.as_ref().map(|b| b.spread)).unwrap_or(0.15),
        multilabel: a.multilabel || base.as_ref().is_some_and(|b| b.multilabel),
        seed: a.seed,
    };
    let data = generate_synthetic(&spec)?;
    save_features(&a.output, &data)?;
    let stats = estimate_stats(&data, PairUniverse::AllPairs)?;
    println!("points: {}", data.len());
    println!("dim: {}", data.dim());
    println!("similar pairs: {} of {}", stats.similar, stats.total);
    println!("similar fraction: {:.6}", stats.similar_fraction());
    println!("dissimilar:similar ratio: {:.4}", stats.imbalance_ratio());
    Ok(())
}

pub fn split(a: SplitArgs) -> Result<()> {
    let data = load_features(&a.input)?;
    let fractions = SplitFractions {
        train: a.train,
        database: a.database,
        query: a.query,
    };
    let s = hashcont::pairdata::split(&data, a.mode.into(), fractions, a.seed)?;
    for (name, part) in [("train", &s.train), ("database", &s.database), ("queries", &s.queries)] {
        save_features(&a.out_dir.join(format!("{name}.hnfv")), part)?;
        println!("{name}: {}", part.len());
    }
    Ok(())
}

#[derive(Serialize)]
struct TrainSummary<'a> {
    variant: &'a str,
    stages: usize,
    evaluations: usize,
    beta: f64,
    j_mean: f64,
    l_mean: f64,
    relative_gap: f64,
    mean_abs_g: f64,
}

fn resolve_out_dir(flag: Option<PathBuf>, config: Option<&PathBuf>) -> PathBuf {
    flag.or_else(|| config.cloned())
        .or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT))
}

pub fn train(a: TrainArgs) -> Result<()> {
    let mut cfg = RunConfig::load(&a.config).with_context(|| format!("loading {}", a.config.display()))?;
    let out = resolve_out_dir(a.out_dir, cfg.output_dir.as_ref());
    cfg.train = a.variant.apply(cfg.train);
    cfg.train.validate()?;
    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    let effective = RunConfig {
        output_dir: None,
        ..cfg.clone()
    };
    write_text(&out.join("config.json"), &effective.to_json()?)?;

    let run = cfg.load_data()?;
    if let RunData::Split(s) = &run {
        for (name, part) in [("train", &s.train), ("database", &s.database), ("queries", &s.queries)] {
            save_features(&out.join(format!("{name}.hnfv")), part)?;
        }
    }
    let mut trainer = Trainer::new(run.train(), cfg.train.clone())?;
    let outcome = trainer.run();
    trainer.log().write_ndjson(create(&out.join("train.ndjson"))?)?;
    if let Err(e) = outcome {
        if let Some(ck) = trainer.last_good_checkpoint() {
            ck.write(create(&out.join("model.hnck"))?)?;
            eprintln!("kept checkpoint of the last completed stage (beta {})", ck.beta);
        }
        return Err(e).context("training failed");
    }
    trainer.checkpoint().write(create(&out.join("model.hnck"))?)?;

    let last = trainer.log().last().context("training produced no evaluation")?;
    let summary = TrainSummary {
        variant: a.variant.name(),
        stages: cfg.train.schedule.stages(),
        evaluations: trainer.log().records.len(),
        beta: last.beta,
        j_mean: last.j_mean,
        l_mean: last.l_mean,
        relative_gap: (last.j_sum - last.l_sum).abs() / last.l_sum.max(1e-9),
        mean_abs_g: last.mean_abs_g,
    };
    write_text(
        &out.join("summary.json"),
        &(serde_json::to_string_pretty(&summary)? + "\n"),
    )?;
    println!(
        "J {:.6}  L {:.6}  mean|g| {:.4}",
        summary.j_mean, summary.l_mean, summary.mean_abs_g
    );
    println!("wrote {}", out.display());
    Ok(())
}

fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    Checkpoint::read(BufReader::new(file)).with_context(|| format!("reading {}", path.display()))
}

fn manifest_path(codes: &Path) -> PathBuf {
    codes.with_extension("json")
}

pub fn encode(a: EncodeArgs) -> Result<()> {
    let mut data = load_features(&a.input[0])?;
    for path in &a.input[1..] {
        data = data.concat(&load_features(path)?)?;
    }
    if data.is_empty() {
        bail!("input holds no points");
    }
    let codes = match (&a.checkpoint, a.lsh_bits) {
        (Some(ck), _) => encode_dataset(&read_checkpoint(ck)?.params, &data)?,
        (None, Some(bits)) => lsh_encode(&data, bits, a.lsh_seed)?,
        (None, None) => bail!("either --checkpoint or --lsh-bits is required"),
    };
    let k = codes[0].len();
    write_codes(create(&a.output)?, k, &codes)?;
    let ids = (0..data.len() as u64).map(|i| i + a.id_offset).collect();
    let file_name = a
        .output
        .file_name()
        .context("output path has no file name")?
        .to_string_lossy()
        .into_owned();
    IndexManifest::new(file_name, k, ids, Some(data.label_sets())).save(&manifest_path(&a.output))?;
    println!("encoded {} points into {k}-bit codes", codes.len());
    Ok(())
}

/// Loads an index from its manifest; the code file is resolved next to it.
fn load_index(manifest: &Path) -> Result<CodeIndex> {
    let m = IndexManifest::load(manifest).with_context(|| format!("reading manifest {}", manifest.display()))?;
    let codes_path = manifest.parent().unwrap_or(Path::new("")).join(&m.code_file);
    let file = File::open(&codes_path).with_context(|| format!("opening {}", codes_path.display()))?;
    let (k, codes) = read_codes(BufReader::new(file))?;
    Ok(m.into_index(k, codes)?)
}

pub fn eval(a: EvalArgs) -> Result<()> {
    let db = load_index(&a.database)?;
    let qi = load_index(&a.queries)?;
    if db.k() != qi.k() {
        bail!("query codes have {} bits, database codes {}", qi.k(), db.k());
    }
    if db.labels().is_none() {
        bail!("database manifest has no labels");
    }
    let metrics = a
        .metrics
        .iter()
        .map(|m| m.parse::<Metric>())
        .collect::<hashcont::Result<Vec<_>>>()?;
    let opts = EvalOptions {
        ap_denominator: if a.ap_min_rk {
            ApDenominator::MinRelevantK
        } else {
            ApDenominator::RetrievedRelevant
        },
        exclude_self: !a.keep_self,
        ..EvalOptions::default()
    };
    let queries = queries_from_index(&qi)?;
    let ranked_size = if opts.exclude_self && db.ids().iter().any(|id| qi.ids().contains(id)) {
        db.len() - 1
    } else {
        db.len()
    };
    let report = evaluate(&queries, &db, a.k, &metrics, &default_n_values(ranked_size), &opts)?;
    fs::create_dir_all(&a.out_dir)?;
    write_text(&a.out_dir.join("report.json"), &report.to_json()?)?;
    if let Some(csv) = report.pr_csv() {
        write_text(&a.out_dir.join("pr.csv"), &csv)?;
    }
    if let Some(csv) = report.p_at_n_csv() {
        write_text(&a.out_dir.join("p_at_n.csv"), &csv)?;
    }
    if let Some(map) = report.map_at_k {
        println!("MAP@{}: {map:.6}", a.k);
    }
    if let Some(p) = report.p_at_h2 {
        println!("P@H<=2: {p:.6}");
    }
    println!("wrote {}", a.out_dir.display());
    Ok(())
}

fn parse_bits(s: &str) -> Result<BinaryCode> {
    let bits = s
        .chars()
        .map(|c| match c {
            '1' => Ok(true),
            '0' => Ok(false),
            other => Err(anyhow::anyhow!("invalid bit character {other:?}")),
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(BinaryCode::from_bools(&bits)?)
}

pub fn query(a: QueryArgs) -> Result<()> {
    let db = load_index(&a.database)?;
    let code = match (&a.bits, a.id) {
        (Some(bits), _) => parse_bits(bits)?,
        (None, Some(id)) => {
            let source = match &a.queries {
                Some(q) => load_index(q)?,
                None => db.clone(),
            };
            let pos = source
                .ids()
                .iter()
                .position(|&x| x == id)
                .with_context(|| format!("no code with id {id}"))?;
            source.code(pos)
        }
        (None, None) => bail!("either --bits or --id is required"),
    };
    let mut hits: Vec<Hit> = match a.radius {
        Some(r) => radius_query(&db, &code, r)?,
        None => rank(&db, &code, a.top_n.unwrap_or(DEFAULT_TOP_N))?.hits,
    };
    // A query drawn from the database lists itself first, ahead of other
    // distance-0 ties that the position tie-break would put before it.
    if let Some(id) = a.id.filter(|_| a.bits.is_none()) {
        let own = db.ids().iter().position(|&x| x == id).filter(|&p| db.code(p) == code);
        if let Some(position) = own {
            let before = hits.len();
            hits.retain(|h| h.position != position);
            if a.radius.is_none() && hits.len() == before {
                hits.pop();
            }
            hits.insert(
                0,
                Hit {
                    id,
                    distance: 0,
                    position,
                },
            );
        }
    }
    let mut out = std::io::stdout().lock();
    writeln!(out, "rank\tid\tdistance")?;
    for (i, h) in hits.iter().enumerate() {
        writeln!(out, "{}\t{}\t{}", i + 1, h.id, h.distance)?;
    }
    Ok(())
}

pub fn histogram(a: HistogramArgs) -> Result<()> {
    let ck = read_checkpoint(&a.checkpoint)?;
    let data = load_features(&a.input)?;
    if data.is_empty() {
        bail!("{} holds no points", a.input.display());
    }
    if data.dim() != ck.params.input_dim() {
        bail!(
            "features have dimension {}, encoder expects {}",
            data.dim(),
            ck.params.input_dim()
        );
    }
    let beta = a.beta.unwrap_or(ck.beta);
    let (g, _) = forward(&ck.params, beta, &data.feature_matrix())?;
    let hist = code_histogram(&g, a.bins)?;
    hist.write_csv(create(&a.output)?)?;
    println!("top-bin fraction: {:.6}", hist.top_bin_fraction());
    Ok(())
}
