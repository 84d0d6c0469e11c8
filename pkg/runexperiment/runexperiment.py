"""
Experiment runner

For every repetition: partition -> per-batch HMC -> postprocess -> fit GPs
-> merge -> recombine -> compare with the reference sample. Per-batch
work runs on a thread pool; every random stream is keyed by
(repetition seed, batch id), so worker count never changes the numbers.

Usage:
    python runexperiment/runexperiment.py run configs/rare_bernoulli.toml
    python runexperiment/runexperiment.py summarize results/rare_bernoulli
"""

import json
import logging
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent))

import numpy as np
import pandas as pd
import typer
from scipy import stats
from scipy.optimize import minimize
from tqdm import tqdm

from common.csvio import write_frame
from common.errors import ConfigurationError, DomainError, GpMergeError, IngestError
from common.logsetup import banner, configure_logging, console
from common.workers import derive_seed, parallel_map, resolve_workers
from discrepancy.discrepancy import DiscrepancyReport, compare_samples
from gpsurrogate.gpsurrogate import GpSurrogate, fit_hyperparams
from hmcsampler.hmcsampler import ChainRecord, HmcConfig, postprocess, run_hmc
from mergegp.consensus import StudentTProposal, consensus_merge, student_t_proposal
from mergegp.mergegp import MergedGp
from recombine.recombine import WeightedSample, gp_hmc_sample, moment_functionals, resample, run_dis, run_gp_is
from runexperiment.config import ALGORITHMS, ExperimentConfig, RecombineSection, load_config
from runexperiment.emitresults import emit_results
from runexperiment.ingest import ingest_csv
from targets.models import Model, make_model
from targets.targets import Dataset, SubposteriorTarget, full_batch, generate_data, partition_data

logger = logging.getLogger(__name__)

app = typer.Typer(add_completion=False, help="Divide-and-conquer posterior experiments with GP surrogates")


@dataclass
class RunOutcome:
    exit_code: int
    output_dir: Path
    reports: list[DiscrepancyReport] = field(default_factory=list)
    failures: list[dict] = field(default_factory=list)


def _hmc_config(config: ExperimentConfig, n_iter: int, adapt_iters: int, seed: int) -> HmcConfig:
    return HmcConfig(
        n_iter=n_iter,
        leapfrog_steps=config.hmc.leapfrog_steps,
        step_size=config.hmc.step_size,
        adapt_iters=adapt_iters,
        target_accept=config.hmc.target_accept,
        seed=seed,
        adapt_mass=config.hmc.adapt_mass,
        step_jitter=config.hmc.step_jitter,
    )


def _start_point(target: SubposteriorTarget) -> np.ndarray:
    """Local mode of the target found from the origin; the origin if that fails"""
    origin = np.zeros(target.dim)

    def objective(theta):
        try:
            return -target.log_density(theta), -target.grad_log_density(theta)
        except DomainError:
            return 1e300, np.zeros_like(theta)

    result = minimize(objective, origin, jac=True, method="L-BFGS-B")
    return result.x if np.all(np.isfinite(result.x)) and result.fun < 1e300 else origin


def evenly_spaced(draws: np.ndarray, n: int) -> np.ndarray:
    """n rows spread evenly over draws (all rows when there are fewer)"""
    if draws.shape[0] <= n:
        return draws
    return draws[np.linspace(0, draws.shape[0] - 1, n).round().astype(int)]


def load_dataset(config: ExperimentConfig, model: Model) -> tuple[Dataset, np.ndarray | None]:
    """Simulated or ingested data and the natural-scale true parameter (None for real data)"""
    if config.data.source == "csv":
        data = ingest_csv(config.data.csv_path, config.data.response_column, config.data.covariate_columns)
        model.check_data(data.observations, data.responses)
        return data, None
    theta_star = np.asarray(config.model.true_theta or model.default_theta, dtype=float)
    data = generate_data(model, config.data.n, theta_star, seed=config.data.seed)
    return data, theta_star


def reference_sample(config: ExperimentConfig, model: Model, data: Dataset) -> np.ndarray:
    """Natural-scale reference sample of N draws: long full-data HMC, thinned, or the exact Beta posterior"""
    n_samples = config.recombine.n_samples
    if config.reference.kind == "analytic":
        successes = float(np.sum(data.observations[:, 0]))
        a, b = model.posterior_parameters(successes, data.n)
        rng = np.random.default_rng(config.reference.seed)
        return stats.beta(a, b).rvs(size=n_samples, random_state=rng).reshape(n_samples, 1)
    target = SubposteriorTarget(model, full_batch(data), 1)
    hmc = _hmc_config(config, config.reference.n_iter, config.reference.adapt_iters, config.reference.seed)
    chain = run_hmc(target, hmc, _start_point(target))
    return model.to_natural(evenly_spaced(chain.sampled_draws(), n_samples))


def _run_chain(config: ExperimentConfig, model: Model, batch, c_total: int, seed: int) -> ChainRecord:
    target = SubposteriorTarget(model, batch, c_total)
    hmc = _hmc_config(config, config.hmc.n_iter, config.hmc.adapt_iters, derive_seed(seed, batch.batch_id))
    chain = run_hmc(target, hmc, _start_point(target))
    logger.info(
        f"Batch {batch.batch_id}: acceptance {chain.acceptance_rate:.2f}, step {chain.tuned_step_size:.3g}"
    )
    return chain


def training_set(config: ExperimentConfig, chain: ChainRecord) -> ChainRecord:
    """Thin and deduplicate a batch chain down to at most J training pairs"""
    j_train = config.gp.j_train
    thin = config.gp.thin or max(1, (chain.n_draws - chain.n_warmup) // j_train)
    processed = postprocess(chain, thin=thin)
    if processed.n_draws > j_train:
        processed = processed.subset(np.arange(processed.n_draws - j_train, processed.n_draws))
    return processed


def _fit(config: ExperimentConfig, processed: ChainRecord, seed: int, batch_id: int) -> GpSurrogate:
    return fit_hyperparams(processed, seed=derive_seed(seed, batch_id, 1), n_restarts=config.gp.restarts)


def run_repetition(
    config: ExperimentConfig,
    model: Model,
    data: Dataset,
    reference: np.ndarray,
    theta_star: np.ndarray | None,
    repetition: int,
    output_dir: Path,
    provenance: dict,
) -> tuple[list[DiscrepancyReport], list[dict]]:
    """
    One random re-split through every requested algorithm

    Returns:
        (reports, timing rows)
    """
    seed = config.run.seed + repetition
    c_total = config.partition.c_total
    n_samples = config.recombine.n_samples
    algorithms = config.recombine.algorithms
    workers = resolve_workers(config.run.workers, c_total)
    rep_dir = output_dir / f"rep_{repetition:03d}"
    stamp = {**provenance, "seed": seed}

    batches = partition_data(data, c_total, seed)
    started = time.perf_counter()
    chains = parallel_map(lambda b: _run_chain(config, model, b, c_total, seed), batches, workers)
    chain_time = time.perf_counter() - started
    for batch, chain in zip(batches, chains):
        chain.to_csv(rep_dir / f"chain_batch_{batch.batch_id:02d}.csv", stamp)

    samples: dict[str, np.ndarray] = {}
    weighted: dict[str, WeightedSample] = {}
    timings: dict[str, float] = {}
    merged = None
    approx = None
    consensus_draws = None
    gp_hmc_draws = None
    surrogate_time = 0.0

    needs_gp = any(a in algorithms for a in ("gp_hmc", "dis", "gp_is"))
    needs_consensus = any(a in algorithms for a in ("consensus", "consensus_dis")) or (
        "gp_is" in algorithms and config.recombine.gp_is_proposal == "consensus"
    )

    if needs_gp:
        started = time.perf_counter()
        processed = [training_set(config, chain) for chain in chains]
        surrogates = parallel_map(
            lambda pair: _fit(config, pair[1], seed, pair[0].batch_id), list(zip(batches, processed)), workers
        )
        surrogate_time = time.perf_counter() - started
        for batch, surrogate in zip(batches, surrogates):
            surrogate.save_json(rep_dir / f"surrogate_batch_{batch.batch_id:02d}.json", stamp)
        merged = MergedGp(surrogates, n_jobs=workers)

    if needs_consensus:
        started = time.perf_counter()
        consensus_draws, approx = consensus_merge([evenly_spaced(c.sampled_draws(), n_samples) for c in chains])
        timings["consensus"] = chain_time + time.perf_counter() - started

    if "consensus" in algorithms:
        samples["consensus"] = consensus_draws

    def gp_hmc_output():
        nonlocal gp_hmc_draws
        if gp_hmc_draws is None:
            started = time.perf_counter()
            hmc = _hmc_config(config, n_samples, config.hmc.adapt_iters, derive_seed(seed, 0, 2))
            gp_hmc_draws = gp_hmc_sample(merged, hmc).sampled_draws()
            timings["gp_hmc"] = chain_time + surrogate_time + time.perf_counter() - started
        return gp_hmc_draws

    if "gp_hmc" in algorithms:
        samples["gp_hmc"] = gp_hmc_output()

    if "dis" in algorithms:
        proposal = gp_hmc_output()
        started = time.perf_counter()
        weighted["dis"] = run_dis(
            proposal, merged.log_expected_density_many(proposal), model, batches, c_total, workers
        )
        timings["dis"] = timings["gp_hmc"] + time.perf_counter() - started

    if "consensus_dis" in algorithms:
        started = time.perf_counter()
        weighted["consensus_dis"] = run_dis(
            consensus_draws, approx.logpdf(consensus_draws), model, batches, c_total, workers
        )
        timings["consensus_dis"] = timings["consensus"] + time.perf_counter() - started

    if "gp_is" in algorithms:
        if config.recombine.gp_is_proposal == "consensus":
            proposal = student_t_proposal(approx, config.recombine.dof)
            base_time = timings["consensus"] + surrogate_time
        else:
            proposal = StudentTProposal.from_sample(gp_hmc_output(), config.recombine.dof)
            base_time = timings["gp_hmc"]
        started = time.perf_counter()
        result = run_gp_is(
            merged,
            proposal,
            n_samples,
            config.recombine.m_realisations,
            moment_functionals(model.dim, model.to_natural),
            seed=derive_seed(seed, 0, 3),
            method=config.recombine.realisation_method,
            max_rank=config.recombine.max_rank,
        )
        timings["gp_is"] = base_time + time.perf_counter() - started
        result.save_json(rep_dir / "gp_is_summary.json", stamp)
        weighted["gp_is"] = result.weighted

    for name, sample in weighted.items():
        natural = WeightedSample(model.to_natural(sample.points), sample.weights, sample.log_z_hat)
        natural.to_csv(rep_dir / f"weighted_{name}.csv", stamp)
        samples[name] = resample(sample, n_samples, derive_seed(seed, 0, 4, ALGORITHMS.index(name)))

    reports, timing_rows = [], []
    for name in algorithms:
        natural = model.to_natural(samples[name])
        frame = pd.DataFrame(natural, columns=[f"theta_{i + 1}" for i in range(natural.shape[1])])
        write_frame(frame, rep_dir / f"samples_{name}.csv", stamp)
        reports.append(
            compare_samples(
                reference,
                natural,
                name,
                repetition,
                theta_star=theta_star,
                knn=config.run.knn,
                seed=seed,
                wall_time_seconds=timings[name],
            )
        )
        timing_rows.append({"algorithm": name, "repetition": repetition, "wall_time_seconds": timings[name]})
    return reports, timing_rows


def _write_jsonl(reports: list[DiscrepancyReport], path: Path, provenance: dict):
    with open(path, "w", encoding="utf-8") as f:
        for report in reports:
            f.write(json.dumps({**report.to_dict(), "provenance": provenance}, sort_keys=True, allow_nan=False) + "\n")


def run_experiment(config: ExperimentConfig, show_progress: bool = True) -> RunOutcome:
    """
    Run every repetition and write all artifacts under config.run.output_dir

    Stage failures inside a repetition are recorded in failures.json and
    the run moves on; the exit code is 1 when anything failed.
    """
    output_dir = Path(config.run.output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)
    provenance = {"config_hash": config.config_hash(), "seed": config.run.seed}
    with open(output_dir / "config.json", "w", encoding="utf-8") as f:
        json.dump({**config.model_dump(mode="json"), "provenance": provenance}, f, indent=2)

    model = make_model(config.model.name, config.model.constants)
    data, theta_star = load_dataset(config, model)
    outcome = RunOutcome(exit_code=0, output_dir=output_dir)

    banner(f"Reference sample ({config.reference.kind})")
    try:
        reference = reference_sample(config, model, data)
    except Exception as exc:
        _log_failure("Reference run", exc)
        outcome.failures.append(_failure(-1, "reference", exc))
        _finish(outcome, [], provenance)
        return outcome
    write_frame(
        pd.DataFrame(reference, columns=[f"theta_{i + 1}" for i in range(reference.shape[1])]),
        output_dir / "reference_samples.csv",
        provenance,
    )

    banner(f"{config.run.repetitions} repetition(s) of {model.name}, C={config.partition.c_total}")
    timing_rows = []
    repetitions = range(config.run.repetitions)
    for repetition in tqdm(repetitions, desc="repetitions", disable=not show_progress):
        try:
            reports, rows = run_repetition(config, model, data, reference, theta_star, repetition, output_dir, provenance)
        except Exception as exc:
            _log_failure(f"Repetition {repetition}", exc)
            outcome.failures.append(_failure(repetition, "repetition", exc))
            continue
        outcome.reports.extend(reports)
        timing_rows.extend(rows)
        logger.info(f"Progress: {repetition + 1}/{config.run.repetitions}")

    _finish(outcome, timing_rows, provenance)
    return outcome


def _log_failure(label: str, exc: Exception):
    if isinstance(exc, GpMergeError):
        logger.error(f"{label} failed: {type(exc).__name__}: {exc}")
    else:
        logger.exception(f"{label} failed unexpectedly: {type(exc).__name__}: {exc}")


def _failure(repetition: int, stage: str, exc: Exception) -> dict:
    return {
        "repetition": repetition,
        "stage": stage,
        "error": type(exc).__name__,
        "message": str(exc),
        "diagnostics": getattr(exc, "diagnostics", {}),
    }


def _finish(outcome: RunOutcome, timing_rows: list[dict], provenance: dict):
    output_dir = outcome.output_dir
    _write_jsonl(outcome.reports, output_dir / "reports.jsonl", provenance)
    timings = pd.DataFrame(timing_rows, columns=["algorithm", "repetition", "wall_time_seconds"])
    write_frame(timings, output_dir / "timings.csv", provenance)
    if outcome.failures:
        with open(output_dir / "failures.json", "w", encoding="utf-8") as f:
            json.dump({"failures": outcome.failures, "provenance": provenance}, f, indent=2, default=str)
        outcome.exit_code = 1
    if outcome.reports:
        paths = emit_results(outcome.reports, output_dir, timings=timings, provenance=provenance)
        banner("Summary")
        console.print(paths["markdown"].read_text(encoding="utf-8"))
    logger.info(f"Finished with {len(outcome.failures)} failure(s); results in {output_dir}")


def apply_algorithm_filter(config: ExperimentConfig, algorithms: list[str] | None) -> ExperimentConfig:
    """Restrict the configured algorithms (validated like the config file)"""
    if not algorithms:
        return config
    try:
        section = RecombineSection.model_validate({**config.recombine.model_dump(), "algorithms": algorithms})
    except ValueError as exc:
        raise ConfigurationError(f"Invalid algorithm filter: {exc}") from None
    return config.model_copy(update={"recombine": section})


@app.command()
def run(
    config_path: Path = typer.Argument(..., help="TOML experiment file"),
    output_dir: str | None = typer.Option(None, "--output-dir", "-o", help="Override run.output_dir"),
    seed: int | None = typer.Option(None, "--seed", help="Override run.seed"),
    workers: int | None = typer.Option(None, "--workers", "-w", help="Override run.workers"),
    algorithm: list[str] | None = typer.Option(None, "--algorithm", "-a", help="Only run these algorithms"),
    log_level: str | None = typer.Option(None, "--log-level", help="Override run.log_level"),
    progress: bool = typer.Option(True, "--progress/--no-progress", help="Show a progress bar"),
):
    """Run an experiment; exit status 0 = success, 1 = some repetition failed, 2 = bad configuration"""
    overrides = {"output_dir": output_dir, "seed": seed, "workers": workers, "log_level": log_level}
    try:
        config = apply_algorithm_filter(load_config(config_path, overrides), algorithm)
        configure_logging(config.run.log_level)
        outcome = run_experiment(config, show_progress=progress)
    except (ConfigurationError, DomainError, IngestError) as exc:
        console.print(f"[red]Configuration error:[/red] {exc}")
        raise typer.Exit(2)
    raise typer.Exit(outcome.exit_code)


@app.command()
def summarize(run_dir: Path = typer.Argument(..., help="Directory holding reports.jsonl")):
    """Rebuild summary tables from reports.jsonl"""
    configure_logging("INFO")
    path = run_dir / "reports.jsonl"
    if not path.exists():
        console.print(f"[red]No reports.jsonl in {run_dir}[/red]")
        raise typer.Exit(2)
    records = [json.loads(line) for line in path.read_text(encoding="utf-8").splitlines() if line.strip()]
    if not records:
        console.print(f"[red]{path} holds no reports[/red]")
        raise typer.Exit(1)
    provenance = records[0].get("provenance")
    reports = [{k: v for k, v in r.items() if k != "provenance"} for r in records]
    timings_path = run_dir / "timings.csv"
    timings = pd.read_csv(timings_path, comment="#") if timings_path.exists() else None
    paths = emit_results(reports, run_dir, timings=timings, provenance=provenance)
    console.print(paths["markdown"].read_text(encoding="utf-8"))


if __name__ == "__main__":
    app()
