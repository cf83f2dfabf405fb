use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use dca::analysis::analyze_attention;
use dca::autodiff::{gradient_check, ParamId};
use dca::checkpoint;
use dca::config::ModelConfig;
use dca::corpus::{load_jsonl, write_jsonl, Example, Vocabulary};
use dca::evaluate::{decode_corpus, evaluate, prepare_for_decoding, sweep, EvalRow};
use dca::inference::DecodeOptions;
use dca::model::Model;
use dca::objectives::{mle_loss, sem_loss, sentence_end_states};
use dca::rouge::score_report;
use dca::toy::{make_toy_corpus, CorpusKind, ToyOptions};
use dca::train::{prepare_all, train};
use dca::{DcaError, Result};

/// Multi-agent abstractive summarizer: corpus tools, training, decoding and scoring.
#[derive(Parser)]
#[command(name = "dca", version)]
struct Cli {
    /// JSON model configuration; unspecified fields take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write synthetic train/valid/test JSONL files.
    MakeCorpus(MakeCorpusArgs),
    /// Train a model; with several --agents values, train and evaluate one per count.
    Train(TrainArgs),
    /// Decode a corpus and print mean ROUGE F1 as a table row.
    Eval(EvalArgs),
    /// Write one decoded summary per input line.
    Decode(DecodeArgs),
    /// Score line-aligned hypothesis and reference token files.
    Score(ScoreArgs),
    /// Bin examples by their largest mean agent-attention share.
    Analyze(AnalyzeArgs),
    /// Compare model gradients against finite differences on a toy example.
    Gradcheck(GradcheckArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Copy,
    Lead,
}

#[derive(Args)]
struct MakeCorpusArgs {
    #[arg(long, value_enum, default_value = "copy")]
    kind: Kind,
    /// Training pairs.
    #[arg(long, default_value_t = 64)]
    size: usize,
    #[arg(long, default_value_t = 16)]
    valid_size: usize,
    #[arg(long, default_value_t = 16)]
    test_size: usize,
    #[arg(long, default_value_t = 40)]
    word_types: usize,
    #[arg(long, default_value_t = 2)]
    paragraphs: usize,
    #[arg(long, default_value_t = 2)]
    sentences: usize,
    #[arg(long, default_value_t = 8)]
    lead_tokens: usize,
    #[arg(long, default_value_t = 0.0)]
    oov_rate: f64,
    /// Defaults to the config seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    valid: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Comma-separated agent counts for a sweep, e.g. 2,3,5.
    #[arg(long, value_delimiter = ',')]
    agents: Vec<usize>,
    /// Evaluation corpus for a sweep.
    #[arg(long)]
    test: Option<PathBuf>,
}

#[derive(Args)]
struct DecodeFlags {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    beam: Option<usize>,
    #[arg(long)]
    max_len: Option<usize>,
    #[arg(long)]
    no_trigram_block: bool,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    decode: DecodeFlags,
}

#[derive(Args)]
struct DecodeArgs {
    #[command(flatten)]
    decode: DecodeFlags,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ScoreArgs {
    #[arg(long)]
    hyp: PathBuf,
    #[arg(long = "ref", value_name = "FILE")]
    reference: PathBuf,
}

#[derive(Args)]
struct AnalyzeArgs {
    #[command(flatten)]
    decode: DecodeFlags,
    #[arg(long, default_value_t = 5)]
    bins: usize,
    /// Write the report here instead of standard output.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 1e-5)]
    eps: f64,
    #[arg(long, default_value_t = 1e-6)]
    tolerance: f64,
}

fn load_config(path: Option<&Path>) -> Result<ModelConfig> {
    let mut c = match path {
        Some(p) => ModelConfig::load(p)?,
        None => ModelConfig::default(),
    };
    if let Ok(seed) = std::env::var("DCA_SEED") {
        c.seed = seed
            .trim()
            .parse()
            .map_err(|_| DcaError::Config(format!("DCA_SEED {seed:?} is not an unsigned integer")))?;
    }
    c.validate()?;
    Ok(c)
}

fn require_config(path: Option<&Path>) -> Result<ModelConfig> {
    if path.is_none() {
        return Err(DcaError::Argument("--config FILE is required".into()));
    }
    load_config(path)
}

/// Loads a checkpoint, checking it against `--config` when one is given.
fn load_model(config: Option<&Path>, ckpt: &Path) -> Result<Model> {
    let (model, _) = match config {
        Some(_) => checkpoint::load_for(ckpt, &load_config(config)?)?,
        None => checkpoint::load(ckpt)?,
    };
    Ok(model)
}

fn decode_options(model: &Model, f: &DecodeFlags) -> Result<DecodeOptions> {
    let mut o = DecodeOptions::from_config(&model.config);
    if let Some(b) = f.beam {
        o.beam_width = b;
    }
    if let Some(m) = f.max_len {
        o.max_len = m;
    }
    if f.no_trigram_block {
        o.block_trigrams = false;
    }
    if o.beam_width == 0 || o.max_len == 0 {
        return Err(DcaError::Argument("--beam and --max-len must be at least 1".into()));
    }
    Ok(o)
}

fn make_corpus(config: Option<&Path>, a: &MakeCorpusArgs) -> Result<()> {
    let seed = match a.seed {
        Some(s) => s,
        None => load_config(config)?.seed,
    };
    let base = ToyOptions {
        kind: match a.kind {
            Kind::Copy => CorpusKind::Copy,
            Kind::Lead => CorpusKind::Lead,
        },
        word_types: a.word_types,
        paragraphs: a.paragraphs,
        sentences_per_paragraph: a.sentences,
        lead_tokens: a.lead_tokens,
        oov_rate: a.oov_rate,
        ..Default::default()
    };
    fs::create_dir_all(&a.out)?;
    let splits = [
        ("train", a.size, 0u64),
        ("valid", a.valid_size, 1),
        ("test", a.test_size, 2),
    ];
    for (name, size, offset) in splits {
        let opts = ToyOptions {
            size,
            seed: seed.wrapping_mul(3).wrapping_add(offset),
            ..base.clone()
        };
        let path = a.out.join(format!("{name}.jsonl"));
        write_jsonl(&path, &make_toy_corpus(&opts)?)?;
        println!("{}\t{size}", path.display());
    }
    Ok(())
}

fn load_corpus(path: &Path) -> Result<Vec<Example>> {
    let c = load_jsonl(path)?;
    if c.is_empty() {
        return Err(DcaError::EmptyCorpus);
    }
    Ok(c)
}

fn run_train(config: Option<&Path>, a: &TrainArgs) -> Result<()> {
    let c = require_config(config)?;
    let train_set = load_corpus(&a.train)?;
    let valid_set = load_corpus(&a.valid)?;
    if a.agents.len() > 1 || a.test.is_some() {
        let test = a
            .test
            .as_ref()
            .ok_or_else(|| DcaError::Argument("a sweep needs --test FILE".into()))?;
        let counts = if a.agents.is_empty() {
            vec![c.agents]
        } else {
            a.agents.clone()
        };
        let rows = sweep(&c, &counts, &train_set, &valid_set, &load_corpus(test)?, &a.out)?;
        println!("{}", EvalRow::HEADER);
        for r in rows {
            println!("{}", r.to_tsv());
        }
        return Ok(());
    }
    let mut c = c;
    if let Some(&m) = a.agents.first() {
        c.agents = m;
    }
    let r = train(&c, &train_set, &valid_set, &a.out)?;
    println!(
        "steps\t{}\nbest_nll\t{}\nfinal_val_nll\t{}\nfinal_val_rouge_l\t{}",
        r.steps, r.best_nll, r.final_validation.nll, r.final_validation.rouge_l
    );
    if let Some(b) = r.best_rouge_l {
        println!("best_rouge_l\t{b}");
    }
    Ok(())
}

fn run_eval(config: Option<&Path>, a: &EvalArgs) -> Result<()> {
    let model = load_model(config, &a.decode.ckpt)?;
    let opts = decode_options(&model, &a.decode)?;
    let row = evaluate(&model, &load_corpus(&a.decode.input)?, opts)?;
    println!("{}\n{}", EvalRow::HEADER, row.to_tsv());
    Ok(())
}

fn run_decode(config: Option<&Path>, a: &DecodeArgs) -> Result<()> {
    let model = load_model(config, &a.decode.ckpt)?;
    let opts = decode_options(&model, &a.decode)?;
    let prepared = prepare_for_decoding(&model, &load_corpus(&a.decode.input)?);
    let mut out = String::new();
    for (words, _) in decode_corpus(&model, &prepared, opts)? {
        out.push_str(&words.join(" "));
        out.push('\n');
    }
    fs::write(&a.out, out)?;
    Ok(())
}

fn read_token_lines(path: &Path) -> Result<Vec<Vec<String>>> {
    Ok(fs::read_to_string(path)?
        .lines()
        .map(|l| l.split_whitespace().map(String::from).collect())
        .collect())
}

fn run_score(a: &ScoreArgs) -> Result<()> {
    let hyps = read_token_lines(&a.hyp)?;
    let refs = read_token_lines(&a.reference)?;
    if hyps.len() != refs.len() {
        return Err(DcaError::Argument(format!(
            "{} hypothesis lines for {} reference lines",
            hyps.len(),
            refs.len()
        )));
    }
    print!("{}", score_report(&hyps, &refs));
    Ok(())
}

fn run_analyze(config: Option<&Path>, a: &AnalyzeArgs) -> Result<()> {
    let model = load_model(config, &a.decode.ckpt)?;
    let opts = decode_options(&model, &a.decode)?;
    let prepared = prepare_for_decoding(&model, &load_corpus(&a.decode.input)?);
    let report = analyze_attention(&model, &prepared, a.bins, opts)?.to_tsv();
    match &a.out {
        Some(p) => fs::write(p, report)?,
        None => print!("{report}"),
    }
    Ok(())
}

/// Gradient check of the configured model's likelihood (plus cohesion when
/// enabled) on one synthetic example. Returns whether it passed.
fn run_gradcheck(config: Option<&Path>, a: &GradcheckArgs) -> Result<bool> {
    let mut c = require_config(config)?;
    let types = c.vocab_size.saturating_sub(5).max(1);
    let corpus = make_toy_corpus(&ToyOptions {
        size: 4,
        word_types: types,
        paragraphs: c.agents,
        sentences_per_paragraph: 1,
        min_sentence: 2,
        max_sentence: 4,
        oov_rate: 1.0,
        seed: c.seed,
        ..Default::default()
    })?;
    let vocab = Vocabulary::build(&corpus, c.vocab_size)?;
    c.vocab_size = vocab.len();
    let model = Model::new(c.clone(), vocab, c.seed)?;
    let ex = prepare_all(&corpus[..1], &model.vocab, &c, 6).remove(0);
    let mut store = model.params.clone();
    let ids: Vec<ParamId> = store.ids().collect();
    let report = gradient_check(&mut store, &ids, a.eps, |g| {
        let enc = model.encode(g, &ex)?;
        let tf = model.teacher_forced(g, &enc, &ex.target)?;
        let mut loss = mle_loss(g, &tf.dists, &ex.target)?;
        if c.sem_enabled {
            let states = sentence_end_states(&tf.steps, &ex.target);
            let sem = sem_loss(g, &states)?;
            let sem = g.scale(sem, c.lambda);
            loss = g.add(loss, sem)?;
        }
        Ok(loss)
    })?;
    let pass = report.max_relative_error < a.tolerance;
    println!(
        "coordinates\t{}\nmax_relative_error\t{:e}\nworst\t{}[{}]\n{}",
        report.coordinates,
        report.max_relative_error,
        report.worst_param.as_deref().unwrap_or("-"),
        report.worst_index,
        if pass { "PASS" } else { "FAIL" }
    );
    Ok(pass)
}

fn run(cli: &Cli) -> Result<bool> {
    let config = cli.config.as_deref();
    match &cli.command {
        Command::MakeCorpus(a) => make_corpus(config, a)?,
        Command::Train(a) => run_train(config, a)?,
        Command::Eval(a) => run_eval(config, a)?,
        Command::Decode(a) => run_decode(config, a)?,
        Command::Score(a) => run_score(a)?,
        Command::Analyze(a) => run_analyze(config, a)?,
        Command::Gradcheck(a) => return run_gradcheck(config, a),
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("dca: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
