use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use xmc_core::cache::{Cache, DiskCache, MemoryCache};
use xmc_core::clock::{Clock, SystemClock};
use xmc_core::entity::{EntityType, LinkError};
use xmc_core::eval::{report_table, run_evaluation, write_run, Catalog, Dataset, EvalError, EvalOptions, TamperingStrategy};
use xmc_core::evidence::{HttpImageFetcher, ImageFetcher, ImageLimits};
use xmc_core::scoring::{AnalyzeOptions, DocumentReport, Engine, EngineError};
use xmc_service::assemble::{self, AssembleError};
use xmc_service::config::{ArticleMode, BackendKind, ProviderSettings, SourceMode};
use xmc_service::{Service, ServiceError, Settings};

use crate::{AnalyzeArgs, CliError, EngineArgs, EvaluateArgs, ServeArgs, StrategyChoice, VerifyArgs};

const MEMORY_CACHE_ENTRIES: usize = 4096;

fn assemble_error(e: AssembleError) -> CliError {
    match e {
        AssembleError::Config(_) | AssembleError::Bundle(_) => CliError::Config(e.to_string()),
        other => CliError::Runtime(other.to_string()),
    }
}

fn require_file(path: &Path, what: &str) -> Result<(), CliError> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::Usage(format!("{what} {} does not exist", path.display())))
    }
}

fn read(path: &Path) -> Result<Vec<u8>, CliError> {
    std::fs::read(path).map_err(|e| CliError::Runtime(format!("cannot read {}: {e}", path.display())))
}

fn apply_providers(p: &mut ProviderSettings, backend: Option<BackendKind>, fixtures: &Option<PathBuf>, endpoint: &Option<String>) {
    if let Some(f) = fixtures {
        p.fixtures = Some(f.clone());
        p.backend = BackendKind::Fixture;
    }
    if let Some(e) = endpoint {
        p.endpoint = Some(e.clone());
        p.backend = BackendKind::Remote;
    }
    if let Some(b) = backend {
        p.backend = b;
    }
}

fn settings(args: &EngineArgs) -> Result<Settings, CliError> {
    let mut s = match &args.config {
        Some(path) => Settings::load(path).map_err(|e| CliError::Config(e.to_string()))?,
        None => Settings::default(),
    };
    apply_providers(&mut s.providers, args.backend, &args.fixtures, &args.endpoint);
    if let Some(b) = &args.bundle {
        s.sources.mode = SourceMode::Fixture;
        s.sources.bundle = Some(b.clone());
    }
    if let Some(a) = &args.articles {
        s.articles.mode = ArticleMode::Fixture;
        s.articles.fixtures = Some(a.clone());
    }
    if let Some(l) = args.language {
        s.language = l;
    }
    s.validate().map_err(|e| CliError::Config(e.to_string()))?;
    Ok(s)
}

struct Context {
    settings: Settings,
    clock: Arc<dyn Clock>,
    cache: Arc<dyn Cache>,
    engine: Engine,
}

fn context(args: &EngineArgs) -> Result<Context, CliError> {
    let settings = settings(args)?;
    let clock: Arc<dyn Clock> = Arc::new(SystemClock);
    let cache: Arc<dyn Cache> = match &args.cache_dir {
        Some(dir) => Arc::new(
            DiskCache::open(dir, clock.clone(), settings.cache_capacity).map_err(|e| CliError::Runtime(format!("cache {}: {e}", dir.display())))?,
        ),
        None => Arc::new(MemoryCache::new(clock.clone(), MEMORY_CACHE_ENTRIES)),
    };
    let providers = assemble::providers(&settings.providers).map_err(assemble_error)?;
    let engine = assemble::engine(&settings, providers, clock.clone(), cache.clone()).map_err(assemble_error)?;
    Ok(Context { settings, clock, cache, engine })
}

fn engine_error(e: EngineError) -> CliError {
    match e {
        EngineError::InvalidInput(m) => CliError::Usage(m),
        EngineError::Link(LinkError::NoCandidate) => CliError::Runtime("no candidate entity matches the claim".into()),
        EngineError::Link(e) => CliError::Runtime(e.to_string()),
    }
}

fn emit(value: &impl serde::Serialize, out: Option<&Path>) -> Result<(), CliError> {
    let mut json = serde_json::to_string_pretty(value).map_err(|e| CliError::Runtime(e.to_string()))?;
    json.push('\n');
    match out {
        Some(path) => std::fs::write(path, json).map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display()))),
        None => {
            print!("{json}");
            Ok(())
        }
    }
}

pub fn analyze(args: AnalyzeArgs) -> Result<(), CliError> {
    if let Some(p) = &args.image {
        require_file(p, "image")?;
    }
    if let Some(p) = &args.text_file {
        require_file(p, "text file")?;
    }
    let ctx = context(&args.engine)?;
    let mut image = args.image.as_deref().map(read).transpose()?;
    let (document_id, text) = match (&args.text_file, &args.url) {
        (Some(path), _) => {
            let text = String::from_utf8(read(path)?).map_err(|_| CliError::Usage(format!("{} is not UTF-8 text", path.display())))?;
            let id = path.file_stem().map_or_else(|| "document".to_string(), |s| s.to_string_lossy().into_owned());
            (id, text)
        }
        (None, Some(url)) => {
            let articles = assemble::article_extractor(&ctx.settings, ctx.cache.clone()).map_err(assemble_error)?;
            let article = articles.parse(url).map_err(|e| CliError::Runtime(e.to_string()))?;
            if image.is_none() {
                if let Some(img_url) = &article.main_image_url {
                    let timeout = Duration::from_secs(ctx.settings.sources.timeout_secs);
                    let limits = ImageLimits { max_bytes: ctx.settings.max_upload_bytes, min_dimension: 1 };
                    let fetched = HttpImageFetcher::new(ctx.clock.clone(), timeout, limits).fetch(img_url);
                    match fetched {
                        Ok(img) => image = Some(img.content),
                        Err(e) => tracing::warn!(url = %img_url, error = %e, "main image unavailable; scoring without it"),
                    }
                }
            }
            (url.clone(), article.text)
        }
        (None, None) => unreachable!("clap requires one input"),
    };
    let types: BTreeSet<EntityType> = if args.types.is_empty() { EntityType::ALL.into_iter().collect() } else { args.types.iter().copied().collect() };
    let options = AnalyzeOptions { types, language: ctx.settings.language };
    let report = ctx.engine.score_document(&document_id, &text, image.as_deref(), &options).map_err(engine_error)?;
    emit(&report, args.json.as_deref())
}

pub fn verify_claim(args: VerifyArgs) -> Result<(), CliError> {
    require_file(&args.image, "image")?;
    let ctx = context(&args.engine)?;
    let image = read(&args.image)?;
    let report: DocumentReport = ctx.engine.verify_claim("claim", &args.entity, Some(&image), ctx.settings.language).map_err(engine_error)?;
    if let Some(out) = &args.json {
        emit(&report, Some(out))?;
    }
    let score = report.scores.values().next().ok_or_else(|| CliError::Runtime("claimed entity was not scored".into()))?;
    if let Some(absence) = score.absence {
        tracing::info!(kb_id = %score.kb_id, %absence, "claim has no score");
    }
    emit(score, None)
}

fn eval_error(e: EvalError) -> CliError {
    match e {
        EvalError::UnknownStrategy { .. } => CliError::Usage(e.to_string()),
        other => CliError::Runtime(other.to_string()),
    }
}

pub fn evaluate(args: EvaluateArgs) -> Result<(), CliError> {
    require_file(&args.dataset, "dataset")?;
    require_file(&args.catalog, "catalog")?;
    let mut strategies: Vec<TamperingStrategy> = Vec::new();
    for choice in &args.strategy {
        let add: Vec<TamperingStrategy> = match choice {
            StrategyChoice::All => TamperingStrategy::table(),
            StrategyChoice::One(s) => vec![*s],
        };
        for s in add {
            if !strategies.contains(&s) {
                strategies.push(s);
            }
        }
    }

    let mut provider_settings = ProviderSettings::default();
    apply_providers(&mut provider_settings, args.backend, &args.fixtures, &args.endpoint);
    let providers = assemble::providers(&provider_settings).map_err(assemble_error)?;
    let dataset = Dataset::load(&args.dataset).map_err(eval_error)?;
    let catalog = Catalog::load(&args.catalog).map_err(eval_error)?;
    let mut options = EvalOptions { seed: args.seed, ..EvalOptions::default() };
    if let Some(k) = args.k {
        options.k = k;
    }
    if let Some(m) = args.parent_class_mode {
        options.parent_class_mode = m;
    }
    if let Some(p) = args.parallelism {
        options.parallelism = p.max(1);
    }

    let mut runs = Vec::new();
    for strategy in &strategies {
        let run = run_evaluation(&dataset, &catalog, strategy, &providers, &options).map_err(eval_error)?;
        tracing::info!(strategy = %run.strategy, pairs = run.pairs.len(), excluded = run.excluded, "strategy finished");
        let dir = if strategies.len() == 1 { args.out.clone() } else { args.out.join(&run.strategy) };
        write_run(&dir, &run).map_err(eval_error)?;
        runs.push(run);
    }
    let table = report_table(&runs);
    if strategies.len() > 1 {
        let path = args.out.join("table.txt");
        std::fs::write(&path, &table).map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))?;
    }
    print!("{table}");
    Ok(())
}

fn service_error(e: ServiceError) -> CliError {
    match e {
        ServiceError::Assemble(a) => assemble_error(a),
        other => CliError::Runtime(other.to_string()),
    }
}

pub fn serve(args: ServeArgs) -> Result<(), CliError> {
    let settings = Settings::load(&args.config).map_err(|e| CliError::Config(e.to_string()))?;
    // Remote providers block on their own runtime, so connect before ours starts.
    let service = Service::from_settings(&settings).map_err(service_error)?;
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| CliError::Runtime(format!("runtime: {e}")))?;
    let drain = Duration::from_secs(settings.drain_timeout_secs);
    let drained = runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind(&settings.listen).await.map_err(|e| CliError::Runtime(format!("bind {}: {e}", settings.listen)))?;
        let addr = listener.local_addr().map_err(|e| CliError::Runtime(e.to_string()))?;
        tracing::info!(%addr, workers = settings.workers, "listening");
        xmc_service::serve(listener, service, shutdown_signal(), drain).await.map_err(|e| CliError::Runtime(e.to_string()))
    })?;
    if drained {
        tracing::info!("all running jobs finished");
    } else {
        tracing::warn!("drain timeout elapsed; unfinished jobs resume on next start");
    }
    Ok(())
}

async fn shutdown_signal() {
    let ctrl_c = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    #[cfg(unix)]
    let term = async {
        match tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
            Ok(mut s) => {
                s.recv().await;
            }
            Err(e) => {
                tracing::warn!(error = %e, "cannot listen for SIGTERM");
                std::future::pending::<()>().await;
            }
        }
    };
    #[cfg(not(unix))]
    let term = std::future::pending::<()>();
    tokio::select! {
        _ = ctrl_c => {},
        _ = term => {},
    }
    tracing::info!("shutdown requested");
}
