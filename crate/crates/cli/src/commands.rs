use std::fs::File;
use std::io::BufReader;
use std::path::Path;
use std::time::Instant;

use anyhow::{bail, Context as _};
use kbestnet::eval::{self, EdgeMode, ExperimentSpec, GoldNetwork};
use kbestnet::kbest_dags::SearchStats;
use kbestnet::oracle::{Oracle, MAX_ORACLE_VARS};
use kbestnet::{
    graph, kbest_networks, scoring, CsvOptions, Dataset, Feature, LocalScoreTable, ParentTable,
    PosteriorReport, ScoredNetwork, VarSet, WeightedEnsemble,
};
use serde::Serialize;

use crate::output::{emit, json_bytes, sig4, write_atomic};
use crate::{
    Context, DataArgs, EvaluateArgs, Exactness, FeaturesArgs, KbestArgs, OracleArgs, PredictArgs,
    SampleArgs, ScoreArgs, ScoresArgs,
};

fn check_output(path: Option<&Path>) -> anyhow::Result<()> {
    if let Some(p) = path {
        let dir = p.parent().filter(|d| !d.as_os_str().is_empty());
        if let Some(d) = dir {
            if !d.is_dir() {
                bail!("output directory {} does not exist", d.display());
            }
        }
        if p.is_dir() {
            bail!("output path {} is a directory", p.display());
        }
    }
    Ok(())
}

fn load(args: &DataArgs) -> anyhow::Result<Dataset> {
    load_path(&args.data, args, false)
}

fn load_path(path: &Path, args: &DataArgs, allow_constant: bool) -> anyhow::Result<Dataset> {
    let options = CsvOptions {
        has_header: !args.no_header,
        delimiter: args.delimiter,
        allow_constant,
    };
    Dataset::load_csv(path, options).with_context(|| format!("reading {}", path.display()))
}

/// Local scores, taken from the cache when it matches and written back otherwise.
fn local_scores(
    ctx: &Context,
    data: &Dataset,
    args: &ScoreArgs,
) -> anyhow::Result<LocalScoreTable> {
    let hash = data.content_hash();
    if let Some(path) = &args.scores_cache {
        if path.exists() {
            let reader = BufReader::new(File::open(path)?);
            match LocalScoreTable::read_cache(reader, &hash, args.ess, args.max_parents) {
                Ok(table) => return Ok(table),
                Err(e) => eprintln!("kbestnet: ignoring score cache {}: {e}", path.display()),
            }
        }
    }
    let table = scoring::all_local_scores(data, args.ess, args.max_parents, ctx.exec, ctx.budget)?;
    if let Some(path) = &args.scores_cache {
        let mut bytes = Vec::new();
        table.write_cache(&mut bytes, &hash)?;
        write_atomic(path, &bytes)?;
    }
    Ok(table)
}

fn names_of(set: VarSet, names: &[String]) -> Vec<String> {
    kbestnet::bits::members(set)
        .map(|v| names[v].clone())
        .collect()
}

/// Resolves `KIND:U:V` where the endpoints are indices or column names.
fn parse_feature(spec: &str, data: &Dataset) -> anyhow::Result<Feature> {
    if let Ok(f) = spec.parse::<Feature>() {
        f.validate(data.n())?;
        return Ok(f);
    }
    let parts: Vec<&str> = spec.splitn(3, ':').collect();
    if parts.len() != 3 {
        bail!("cannot parse feature '{spec}'; expected KIND:U:V");
    }
    let index = |s: &str| -> anyhow::Result<usize> {
        data.index_of(s)
            .or_else(|| s.parse().ok())
            .with_context(|| format!("unknown variable '{s}' in feature '{spec}'"))
    };
    let f: Feature = format!("{}:{}:{}", parts[0], index(parts[1])?, index(parts[2])?).parse()?;
    f.validate(data.n())?;
    Ok(f)
}

fn parse_features(specs: &[String], data: &Dataset) -> anyhow::Result<Vec<Feature>> {
    if specs.is_empty() {
        return Ok(Feature::all_directed_edges(data.n()));
    }
    specs.iter().map(|s| parse_feature(s, data)).collect()
}

#[derive(Serialize)]
struct ScoreTableJson<'a> {
    variables: &'a [String],
    ess: f64,
    max_parents: Option<usize>,
    /// `scores[v][i]`: parents of `v` are the `i`-th subset of the other variables.
    scores: Vec<&'a [f64]>,
}

pub fn scores(ctx: &Context, args: ScoresArgs) -> anyhow::Result<()> {
    check_output(Some(&args.out))?;
    check_output(args.json.as_deref())?;
    let data = load(&args.data)?;
    let start = Instant::now();
    let table = local_scores(ctx, &data, &args.score)?;
    let mut bytes = Vec::new();
    table.write_cache(&mut bytes, &data.content_hash())?;
    write_atomic(&args.out, &bytes)?;
    if let Some(path) = &args.json {
        let json = ScoreTableJson {
            variables: data.names(),
            ess: table.ess(),
            max_parents: table.max_parents(),
            scores: (0..table.n()).map(|v| table.variable_scores(v)).collect(),
        };
        write_atomic(path, &json_bytes(&json)?)?;
    }
    eprintln!(
        "{} local scores for {} variables in {} s",
        table.len(),
        table.n(),
        sig4(start.elapsed().as_secs_f64())
    );
    Ok(())
}

#[derive(Serialize)]
struct NetworkJson {
    rank: usize,
    log_score: f64,
    /// Parent names of each variable, in column order.
    parents: Vec<Vec<String>>,
    parent_masks: Vec<VarSet>,
}

#[derive(Serialize)]
struct Timing {
    /// Local-score time in seconds.
    t_local_s: f64,
    /// Total time in seconds, including local scores.
    t_total_s: f64,
}

#[derive(Serialize)]
struct KbestJson {
    variables: Vec<String>,
    k: usize,
    ess: f64,
    max_parents: Option<usize>,
    lambda: f64,
    ln_lambda: f64,
    networks: Vec<NetworkJson>,
    stats: SearchStats,
    #[serde(skip_serializing_if = "Option::is_none")]
    timing: Option<Timing>,
}

struct Search {
    table: LocalScoreTable,
    networks: Vec<ScoredNetwork>,
    stats: SearchStats,
    t_local: f64,
    t_total: f64,
}

fn search(ctx: &Context, data: &Dataset, args: &ScoreArgs, k: u64) -> anyhow::Result<Search> {
    let k = usize::try_from(k).context("k is too large")?;
    let start = Instant::now();
    let table = local_scores(ctx, data, args)?;
    let t_local = start.elapsed().as_secs_f64();
    let parents = ParentTable::build(&table, k, ctx.exec, ctx.budget)?;
    let found = kbest_networks(&parents, k, ctx.exec, ctx.budget)?;
    Ok(Search {
        table,
        networks: found.networks,
        stats: found.stats,
        t_local,
        t_total: start.elapsed().as_secs_f64(),
    })
}

pub fn kbest(ctx: &Context, args: KbestArgs) -> anyhow::Result<()> {
    check_output(args.out.as_deref())?;
    check_output(args.dot.as_deref())?;
    let data = load(&args.data)?;
    let s = search(ctx, &data, &args.score, args.k)?;
    let ensemble = WeightedEnsemble::new(s.networks.clone())?;
    let names = data.names();
    let json = KbestJson {
        variables: names.to_vec(),
        k: args.k as usize,
        ess: args.score.ess,
        max_parents: args.score.max_parents,
        lambda: ensemble.lambda(),
        ln_lambda: ensemble.ln_lambda(),
        networks: s
            .networks
            .iter()
            .map(|g| NetworkJson {
                rank: g.rank,
                log_score: g.score,
                parents: g.parents.iter().map(|&p| names_of(p, names)).collect(),
                parent_masks: g.parents.clone(),
            })
            .collect(),
        stats: s.stats,
        timing: args.timing.then_some(Timing {
            t_local_s: s.t_local,
            t_total_s: s.t_total,
        }),
    };
    emit(args.out.as_deref(), &json_bytes(&json)?)?;
    if let Some(path) = &args.dot {
        let dot: String = s
            .networks
            .iter()
            .map(|g| graph::to_dot(&g.parents, names, &format!("rank_{}", g.rank)))
            .collect();
        write_atomic(path, dot.as_bytes())?;
    }

    eprintln!("{:>6}  {:>12}", "rank", "log score");
    for g in s.networks.iter().take(10) {
        eprintln!("{:>6}  {:>12}", g.rank, sig4(g.score));
    }
    if s.networks.len() > 10 {
        eprintln!("   ...  ({} networks)", s.networks.len());
    }
    eprintln!(
        "lambda = {}  T_l = {} s  T_t = {} s  (table n = {})",
        sig4(ensemble.lambda()),
        sig4(s.t_local),
        sig4(s.t_total),
        s.table.n()
    );
    Ok(())
}

#[derive(Serialize)]
struct FeaturesJson {
    variables: Vec<String>,
    #[serde(flatten)]
    report: PosteriorReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    timing: Option<Timing>,
}

pub fn features(ctx: &Context, args: FeaturesArgs) -> anyhow::Result<()> {
    check_output(args.out.as_deref())?;
    let data = load(&args.data)?;
    let features = parse_features(&args.features, &data)?;
    let s = search(ctx, &data, &args.score, args.k)?;
    let ensemble = WeightedEnsemble::new(s.networks)?;
    let oracle_ok = data.n() <= MAX_ORACLE_VARS && args.score.max_parents.is_none();
    let want_exact = match args.exact {
        Exactness::Never => false,
        Exactness::Auto => oracle_ok,
        Exactness::Always => {
            if args.score.max_parents.is_some() {
                bail!("exact Δ needs the uncapped DAG space; drop --max-parents");
            }
            true
        }
    };
    let delta = if want_exact {
        let oracle = Oracle::new(&s.table, ctx.exec)?;
        Some(ensemble.delta(oracle.log_evidence())?)
    } else {
        None
    };
    let report = PosteriorReport::build(
        &ensemble,
        &features,
        delta,
        args.score.ess,
        args.score.max_parents,
    )?;

    eprintln!(
        "{:<24}  {:>8}  {:>8}  {:>8}",
        "feature", "p_hat", "lower", "upper"
    );
    for (f, est) in features.iter().zip(&report.features).take(30) {
        let (u, v) = f.endpoints();
        let label = format!("{} {}-{}", f.kind(), data.names()[u], data.names()[v]);
        let opt = |x: Option<f64>| x.map(sig4).unwrap_or_else(|| "-".into());
        eprintln!(
            "{label:<24}  {:>8}  {:>8}  {:>8}",
            sig4(est.p_hat),
            opt(est.lower),
            opt(est.upper)
        );
    }
    eprintln!(
        "k = {}  lambda = {}  delta = {}{}",
        report.k,
        sig4(report.lambda),
        report.delta.map(sig4).unwrap_or_else(|| "n/a".into()),
        if report.lambda_above_cutoff {
            "  (lambda above cutoff)"
        } else {
            ""
        }
    );

    let json = FeaturesJson {
        variables: data.names().to_vec(),
        report,
        timing: args.timing.then_some(Timing {
            t_local_s: s.t_local,
            t_total_s: s.t_total,
        }),
    };
    emit(args.out.as_deref(), &json_bytes(&json)?)
}

#[derive(Serialize)]
struct PredictJson {
    log_predictive: f64,
    rows: usize,
    k: usize,
    networks: usize,
    ess: f64,
    max_parents: Option<usize>,
}

pub fn predict(ctx: &Context, args: PredictArgs) -> anyhow::Result<()> {
    check_output(args.out.as_deref())?;
    let data = load(&args.data)?;
    let new_data = load_path(&args.new_data, &args.data, true)?;
    let s = search(ctx, &data, &args.score, args.k)?;
    let ensemble = WeightedEnsemble::new(s.networks)?;
    let log_predictive = ensemble.predict(&data, &new_data, args.score.ess)?;
    eprintln!(
        "ln P(new | data) = {} over {} rows ({} networks)",
        sig4(log_predictive),
        new_data.len(),
        ensemble.len()
    );
    let json = PredictJson {
        log_predictive,
        rows: new_data.len(),
        k: args.k as usize,
        networks: ensemble.len(),
        ess: args.score.ess,
        max_parents: args.score.max_parents,
    };
    emit(args.out.as_deref(), &json_bytes(&json)?)
}

pub fn sample(args: SampleArgs) -> anyhow::Result<()> {
    check_output(Some(&args.out))?;
    check_output(args.network_out.as_deref())?;
    let gold = match &args.gold {
        Some(path) => {
            let g: GoldNetwork = serde_json::from_reader(BufReader::new(File::open(path)?))
                .with_context(|| format!("reading {}", path.display()))?;
            g.validate()?;
            g
        }
        None => eval::random_gold_network(args.n, args.max_in_degree, args.seed)?,
    };
    let data = eval::sample(&gold, args.m, args.data_seed.unwrap_or(args.seed))?;
    let mut bytes = Vec::new();
    data.write_csv(&mut bytes, CsvOptions::default())?;
    write_atomic(&args.out, &bytes)?;
    if let Some(path) = &args.network_out {
        write_atomic(path, &json_bytes(&gold)?)?;
    }
    let edges: usize = gold.parents.iter().map(|&p| kbestnet::bits::len(p)).sum();
    eprintln!(
        "sampled {} rows from a {}-node network with {edges} edges",
        data.len(),
        gold.n()
    );
    Ok(())
}

pub fn evaluate(ctx: &Context, args: EvaluateArgs) -> anyhow::Result<()> {
    check_output(args.out.as_deref())?;
    let mut spec: ExperimentSpec = serde_json::from_reader(BufReader::new(
        File::open(&args.spec).with_context(|| format!("reading {}", args.spec.display()))?,
    ))
    .with_context(|| format!("parsing {}", args.spec.display()))?;
    if args.undirected {
        spec.mode = EdgeMode::Undirected;
    }
    let rows = eval::run_experiment(&spec, ctx.exec, ctx.budget)?;
    let mut bytes = Vec::new();
    eval::write_rows(&rows, &mut bytes)?;
    emit(args.out.as_deref(), &bytes)?;
    eprintln!(
        "{:>4}  {:>6}  {:>6}  {:>8}  {:>8}",
        "rep", "m", "k", "auc", "exact"
    );
    for r in &rows {
        eprintln!(
            "{:>4}  {:>6}  {:>6}  {:>8}  {:>8}",
            r.replicate,
            r.m,
            r.k,
            sig4(r.auc),
            r.exact_auc.map(sig4).unwrap_or_else(|| "-".into())
        );
    }
    Ok(())
}

#[derive(Serialize)]
struct OracleFeature {
    feature: Feature,
    posterior: f64,
}

#[derive(Serialize)]
struct OracleJson {
    variables: Vec<String>,
    ess: f64,
    dag_count: u64,
    log_evidence: f64,
    features: Vec<OracleFeature>,
    #[serde(skip_serializing_if = "Option::is_none")]
    networks: Option<Vec<NetworkJson>>,
}

pub fn oracle(ctx: &Context, args: OracleArgs) -> anyhow::Result<()> {
    check_output(args.out.as_deref())?;
    let data = load(&args.data)?;
    let features = parse_features(&args.features, &data)?;
    // refuse before scoring anything
    if data.n() > MAX_ORACLE_VARS {
        kbestnet::oracle::enumerate_dags(data.n(), |_| {})?;
    }
    let table = scoring::all_local_scores(&data, args.ess, None, ctx.exec, ctx.budget)?;
    let oracle = Oracle::new(&table, ctx.exec)?;
    let features = features
        .into_iter()
        .map(|f| {
            Ok(OracleFeature {
                feature: f,
                posterior: oracle.feature_posterior(&f)?,
            })
        })
        .collect::<kbestnet::Result<Vec<_>>>()?;
    let names = data.names();
    let networks = match args.top {
        Some(0) => bail!("--top must be at least 1"),
        Some(k) => Some(
            oracle
                .brute_topk(k)?
                .into_iter()
                .map(|g| NetworkJson {
                    rank: g.rank,
                    log_score: g.score,
                    parents: g.parents.iter().map(|&p| names_of(p, names)).collect(),
                    parent_masks: g.parents,
                })
                .collect(),
        ),
        None => None,
    };
    eprintln!("ln P(D) = {}", sig4(oracle.log_evidence()));
    for f in features.iter().take(30) {
        eprintln!("{:<16}  {:>8}", f.feature.to_string(), sig4(f.posterior));
    }
    let json = OracleJson {
        variables: names.to_vec(),
        ess: args.ess,
        dag_count: kbestnet::kbest_dags::dag_count(data.n()) as u64,
        log_evidence: oracle.log_evidence(),
        features,
        networks,
    };
    emit(args.out.as_deref(), &json_bytes(&json)?)
}
