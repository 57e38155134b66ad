"""
Command-line interface: generate | train | eval | ablate | sweep | rotate | diagnose | gradcheck.

Exit codes: 0 on success, 1 on invalid input, 2 when a check fails.
"""

import argparse
import csv
import json
import logging
import sys
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from rich.console import Console
from rich.logging import RichHandler
from rich.panel import Panel
from rich.progress import BarColumn, Progress, SpinnerColumn, TextColumn, TimeElapsedColumn
from rich.table import Table

from config.config import (
    ABLATION_FILE, ACCURACY_FILE, CHECKPOINT_FILE, CONFIG_FILE, ENERGY_FILE, ENERGY_TEMPERATURE, JS_FILE,
    LOG_LEVEL, MANIFEST_FILE, METRICS_FILE, MIX_SWEEP_FILE, ROTATION_FILE,
)
from mldgg.core.errors import MldggError, ValidationError
from mldgg.core.gradcheck import CheckResult, run_gradchecks
from mldgg.core.numcore import SeededRng
from mldgg.data.graphdata import Graph, generate_sbm_domain, load_graph, save_graph, split_episode, zero_pad_align
from mldgg.data.scenarios import leave_one_out
from mldgg.diagnostics.diagnostics import export_embeddings, histogram_dists, js_matrix, node_energies
from mldgg.run_config import RunConfig, load_run_config
from mldgg.training.checkpoint import load_checkpoint, save_checkpoint
from mldgg.training.metaloop import (
    AblationMode, EpochMetrics, MetaState, TrainConfig, adapt_to_graph, fine_tune_and_eval, train,
)

logger = logging.getLogger(__name__)

console = Console()

EXIT_OK = 0
EXIT_INVALID = 1
EXIT_CHECK_FAILED = 2

# Stream indices under the run seed
DATA_STREAM = 10
EVAL_STREAM = 11
DIAGNOSE_STREAM = 12

METRICS_HEADER = ["epoch", "support_loss", "query_loss", "neg_elbo", "reg_loss"]


def setup_logging(level: str = LOG_LEVEL):
    logging.basicConfig(
        level=level,
        format="%(message)s",
        datefmt="[%X]",
        handlers=[RichHandler(console=console, show_path=False)],
        force=True,
    )


def _fmt(value) -> str:
    return f"{value:.9g}" if isinstance(value, float) else str(value)


def write_csv(path: Path, header: Sequence[str], rows: Sequence[Sequence], append: bool = False):
    """Comma-separated rows with LF endings and 9 significant digits"""
    path.parent.mkdir(parents=True, exist_ok=True)
    write_header = not (append and path.exists())
    with open(path, "a" if append else "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        if write_header:
            writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def write_run_config(cfg: RunConfig, directory: Path):
    directory.mkdir(parents=True, exist_ok=True)
    (directory / CONFIG_FILE).write_text(cfg.to_json())


def _guard_output(path: Path, force: bool):
    if path.exists() and not force:
        raise FileExistsError(f"{path} already exists; pass --force to overwrite")


def legend_tag(data_name: str, domain: str) -> str:
    return f"{data_name} - {domain}"


def eval_rng(seed: int) -> SeededRng:
    return SeededRng(seed).child(EVAL_STREAM)


def load_domain_graphs(cfg: RunConfig, names: Sequence[str]) -> Dict[str, Graph]:
    """The named graphs from the graph directory, zero-padded to shared dims"""
    missing = [n for n in names if not (cfg.graph_path / f"{n}.json").exists()]
    if missing:
        raise FileNotFoundError(f"graph files missing in {cfg.graph_path} for domains: {missing}")
    graphs = zero_pad_align([load_graph(cfg.graph_path / f"{n}.json") for n in names])
    return dict(zip(names, graphs))


def load_scenario_graphs(cfg: RunConfig) -> Tuple[List[Graph], Graph]:
    """Aligned source graphs and target graph of the configured scenario"""
    if cfg.scenario is None:
        raise MldggError("the config names no scenario")
    graphs = load_domain_graphs(cfg, cfg.scenario.sources + [cfg.scenario.target])
    return [graphs[n] for n in cfg.scenario.sources], graphs[cfg.scenario.target]


def cmd_generate(cfg: RunConfig, force: bool = False) -> List[Path]:
    """One graph file per configured domain plus a manifest"""
    out = cfg.graph_path
    if out.exists() and any(out.iterdir()) and not force:
        raise FileExistsError(f"{out} is not empty; pass --force to overwrite")
    if not cfg.domains:
        raise MldggError("the config lists no domains")
    out.mkdir(parents=True, exist_ok=True)

    rng = SeededRng(cfg.seed).child(DATA_STREAM)
    files, manifest = [], []
    for i, domain in enumerate(cfg.domains):
        stream = rng.child(i)
        path = out / f"{domain.name}.json"
        save_graph(generate_sbm_domain(domain, stream), path)
        files.append(path)
        manifest.append({"domain": domain.name, "file": path.name, "seed": cfg.seed, "stream": list(stream.stream)})
        logger.info("generated %s", path)

    (out / MANIFEST_FILE).write_text(json.dumps({"domains": manifest}, indent=2) + "\n")
    write_run_config(cfg, out)
    write_run_config(cfg, Path(cfg.out_dir))
    return files


def cmd_train(cfg: RunConfig, resume: Optional[str] = None, force: bool = False) -> MetaState:
    """Meta-train on the scenario's sources; writes a checkpoint and per-epoch metrics"""
    out = Path(cfg.out_dir)
    metrics_path = out / METRICS_FILE
    if resume is None:
        _guard_output(metrics_path, force)
    sources, _ = load_scenario_graphs(cfg)

    state = None
    if resume is not None:
        state, _ = load_checkpoint(resume, cfg.train)
        logger.info("resuming from %s at epoch %d", resume, state.epoch)
    elif metrics_path.exists():
        metrics_path.unlink()
    write_run_config(cfg, out)

    with Progress(SpinnerColumn(), TextColumn("[progress.description]{task.description}"), BarColumn(),
                  TimeElapsedColumn(), console=console, transient=True) as progress:
        task = progress.add_task(f"Training {cfg.train.ablation.value}", total=cfg.train.epochs)

        def on_epoch(metrics: EpochMetrics):
            write_csv(metrics_path, METRICS_HEADER, [metrics.as_row()], append=True)
            progress.advance(task)

        state = train(sources, cfg.train, state=state, on_epoch=on_epoch)

    save_checkpoint(out / CHECKPOINT_FILE, state, cfg.train, [g.domain_name for g in sources],
                    config=cfg.model_dump(mode="json"))
    return state


def _dedupe_steps(steps: Sequence[int]) -> List[int]:
    unique = list(dict.fromkeys(steps))
    if len(unique) != len(steps):
        logger.warning("duplicate step counts ignored: %s", list(steps))
    return unique


def evaluate_steps(state: MetaState, target: Graph, steps: Sequence[int], train_cfg: TrainConfig,
                   seed: int) -> List[Tuple[int, float, int]]:
    """(steps, accuracy, query size) per step count, all on one shared split"""
    rng = eval_rng(seed)
    split = split_episode(target, train_cfg.support_fraction, rng.child(0))
    rows = []
    for s in steps:
        accuracy = fine_tune_and_eval(state, target, s, train_cfg, rng, split=split)
        rows.append((s, accuracy, len(split.query)))
    return rows


def cmd_eval(cfg: RunConfig, checkpoint: str, target_path: Optional[str] = None,
             steps: Optional[Sequence[int]] = None) -> List[Tuple[int, float, int]]:
    """Fine-tune on the target's support nodes for each step count and report query accuracy"""
    out = Path(cfg.out_dir)
    state, train_cfg = load_checkpoint(checkpoint)
    if target_path is not None:
        target = load_graph(target_path)
    else:
        _, target = load_scenario_graphs(cfg)
    rows = evaluate_steps(state, target, _dedupe_steps(steps or cfg.eval_steps), train_cfg, cfg.seed)
    write_run_config(cfg, out)
    write_csv(out / ACCURACY_FILE, ["steps", "accuracy", "query_size"], rows)
    return rows


def target_accuracy(sources: Sequence[Graph], target: Graph, train_cfg: TrainConfig) -> Tuple[float, int]:
    """Train from scratch, fine-tune on the target support and score its query nodes"""
    state = train(sources, train_cfg)
    rng = eval_rng(train_cfg.seed)
    split = split_episode(target, train_cfg.support_fraction, rng.child(0))
    accuracy = fine_tune_and_eval(state, target, train_cfg.finetune_steps, train_cfg, rng, split=split)
    return accuracy, len(split.query)


def _seed_summary(sources: Sequence[Graph], target: Graph, train_cfg: TrainConfig,
                  seeds: Sequence[int]) -> Tuple[float, float, int]:
    accuracies = [target_accuracy(sources, target, train_cfg.model_copy(update={"seed": seed}))[0]
                  for seed in seeds]
    return float(np.mean(accuracies)), float(np.std(accuracies)), len(accuracies)


def cmd_ablate(cfg: RunConfig, modes: Optional[Sequence[str]] = None) -> List[Tuple[str, float, float, int]]:
    """Mean and std of target accuracy per ablation mode over the configured seeds"""
    out = Path(cfg.out_dir)
    sources, target = load_scenario_graphs(cfg)
    selected = [AblationMode(m) for m in modes] if modes else list(cfg.ablation.modes)
    write_run_config(cfg, out)

    rows = []
    for mode in selected:
        train_cfg = cfg.train.model_copy(update={"ablation": mode})
        rows.append((mode.value,) + _seed_summary(sources, target, train_cfg, cfg.ablation.seeds))
        logger.info("%s: %.4f +- %.4f", mode.value, rows[-1][1], rows[-1][2])
    write_csv(out / ABLATION_FILE, ["mode", "mean_accuracy", "std_accuracy", "num_seeds"], rows)
    return rows


def cmd_sweep(cfg: RunConfig, mixes: Optional[Sequence[float]] = None) -> List[Tuple[float, float, float, int]]:
    """Target accuracy across mixing weights between the observed and learned structure"""
    out = Path(cfg.out_dir)
    sources, target = load_scenario_graphs(cfg)
    values = list(dict.fromkeys(mixes if mixes else cfg.ablation.mix_values))
    outside = [m for m in values if not 0.0 <= m <= 1.0]
    if outside:
        raise ValidationError(f"mixing weights must lie in [0, 1], got {outside}")
    write_run_config(cfg, out)

    rows = []
    for mix in values:
        train_cfg = cfg.train.model_copy(update={"mix": mix})
        rows.append((mix,) + _seed_summary(sources, target, train_cfg, cfg.ablation.seeds))
        logger.info("mix %.2f: %.4f +- %.4f", mix, rows[-1][1], rows[-1][2])
    write_csv(out / MIX_SWEEP_FILE, ["mix", "mean_accuracy", "std_accuracy", "num_seeds"], rows)
    return rows


def cmd_rotate(cfg: RunConfig) -> List[Tuple[str, float, int]]:
    """Hold out each configured domain in turn as the target and train on the others"""
    out = Path(cfg.out_dir)
    names = [d.name for d in cfg.domains]
    mode = cfg.scenario.mode if cfg.scenario is not None else "S1T1"
    scenarios = leave_one_out(names, mode)
    graphs = load_domain_graphs(cfg, names)
    write_run_config(cfg, out)

    rows = []
    for scenario in scenarios:
        sources = [graphs[n] for n in scenario.sources]
        accuracy, query_size = target_accuracy(sources, graphs[scenario.target], cfg.train)
        rows.append((scenario.target, accuracy, query_size))
        logger.info("held out %s: %.4f", scenario.target, accuracy)
    logger.info("mean over %d targets: %.4f", len(rows), float(np.mean([r[1] for r in rows])))
    write_csv(out / ROTATION_FILE, ["target", "accuracy", "query_size"], rows)
    return rows


def cmd_diagnose(cfg: RunConfig, checkpoint: str) -> Tuple[List[str], np.ndarray]:
    """Per-node energies, the JS matrix of their histograms and embedding exports"""
    out = Path(cfg.out_dir)
    state, train_cfg = load_checkpoint(checkpoint)
    sources, target = load_scenario_graphs(cfg)
    write_run_config(cfg, out)

    rng = SeededRng(cfg.seed).child(DIAGNOSE_STREAM)
    energies: Dict[str, List[float]] = {}
    rows = []
    for i, graph in enumerate(sources + [target]):
        split = split_episode(graph, train_cfg.support_fraction, rng.child(i).child(0))
        model = adapt_to_graph(state, graph, split, train_cfg.finetune_steps, train_cfg, rng.child(i).child(1))
        values = node_energies(model, train_cfg, ENERGY_TEMPERATURE).tolist()
        energies[graph.domain_name] = values
        tag = legend_tag(cfg.data_name, graph.domain_name)
        rows += [(tag, graph.domain_name, node, value) for node, value in enumerate(values)]
        export_embeddings(model, train_cfg, out / f"embeddings_{graph.domain_name}.csv")

    write_csv(out / ENERGY_FILE, ["tag", "domain", "node_id", "energy"], rows)
    names, matrix = js_matrix(histogram_dists(energies))
    write_csv(out / JS_FILE, ["domain"] + names,
              [[name] + matrix[i].tolist() for i, name in enumerate(names)])
    return names, matrix.numpy()


def cmd_gradcheck(instances: int = 10, tolerance: float = 1e-4, seed: int = 0) -> List[CheckResult]:
    return run_gradchecks(instances=instances, tolerance=tolerance, seed=seed)


def show_rows(title: str, header: Sequence[str], rows: Sequence[Sequence]):
    table = Table(title=title)
    for name in header:
        table.add_column(name, style="cyan" if name == header[0] else "green")
    for row in rows:
        table.add_row(*[_fmt(v) for v in row])
    console.print(table)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="run config JSON file")
    common.add_argument("--seed", type=int, help="override the run and training seed")
    common.add_argument("--out", help="override the output directory")
    common.add_argument("--force", action="store_true", help="overwrite existing outputs")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override any config key, e.g. train.epochs=5")

    parser = argparse.ArgumentParser(prog="mldgg", description="Meta-learned graph domain generalization")
    commands = parser.add_subparsers(dest="command", required=True)

    commands.add_parser("generate", parents=[common], help="generate synthetic domain graphs")
    train_parser = commands.add_parser("train", parents=[common], help="meta-train on the source domains")
    train_parser.add_argument("--resume", help="checkpoint to continue from")

    eval_parser = commands.add_parser("eval", parents=[common], help="fine-tune and evaluate on the target")
    eval_parser.add_argument("--checkpoint", required=True)
    eval_parser.add_argument("--target", help="target graph file (default: the scenario target)")
    eval_parser.add_argument("--steps", type=int, nargs="+", help="fine-tuning step counts")

    ablate_parser = commands.add_parser("ablate", parents=[common], help="compare ablation modes")
    ablate_parser.add_argument("--modes", nargs="+", choices=[m.value for m in AblationMode])

    sweep_parser = commands.add_parser("sweep", parents=[common], help="target accuracy across mixing weights")
    sweep_parser.add_argument("--mix", type=float, nargs="+", help="mixing weights in [0, 1]")

    commands.add_parser("rotate", parents=[common], help="hold out each domain as the target in turn")

    diagnose_parser = commands.add_parser("diagnose", parents=[common], help="energy, JS and embedding diagnostics")
    diagnose_parser.add_argument("--checkpoint", required=True)

    gradcheck_parser = commands.add_parser("gradcheck", parents=[common], help="finite-difference gradient suite")
    gradcheck_parser.add_argument("--instances", type=int, default=10)
    gradcheck_parser.add_argument("--tolerance", type=float, default=1e-4)
    return parser


def _run_config(args) -> RunConfig:
    overrides = list(args.set)
    if args.seed is not None:
        overrides += [f"seed={args.seed}", f"train.seed={args.seed}"]
    if args.out is not None:
        overrides.append(f"out_dir={json.dumps(args.out)}")
    return load_run_config(args.config, overrides)


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    setup_logging()

    try:
        cfg = _run_config(args)
        if args.command == "generate":
            files = cmd_generate(cfg, force=args.force)
            console.print(f"✅ Wrote {len(files)} graphs to {cfg.graph_path}")
        elif args.command == "train":
            state = cmd_train(cfg, resume=args.resume, force=args.force)
            console.print(f"✅ Trained to epoch {state.epoch}; checkpoint in {cfg.out_dir}")
        elif args.command == "eval":
            rows = cmd_eval(cfg, args.checkpoint, args.target, args.steps)
            show_rows("🎯 Target accuracy", ["steps", "accuracy", "query_size"], rows)
        elif args.command == "ablate":
            rows = cmd_ablate(cfg, args.modes)
            show_rows("🧪 Ablation", ["mode", "mean_accuracy", "std_accuracy", "num_seeds"], rows)
        elif args.command == "sweep":
            rows = cmd_sweep(cfg, args.mix)
            show_rows("🔀 Mixing weight sweep", ["mix", "mean_accuracy", "std_accuracy", "num_seeds"], rows)
        elif args.command == "rotate":
            rows = cmd_rotate(cfg)
            show_rows("🔁 Leave-one-out", ["target", "accuracy", "query_size"], rows)
        elif args.command == "diagnose":
            names, matrix = cmd_diagnose(cfg, args.checkpoint)
            show_rows("📊 JS distance between energy distributions", ["domain"] + names,
                      [[name] + [float(v) for v in matrix[i]] for i, name in enumerate(names)])
        elif args.command == "gradcheck":
            write_run_config(cfg, Path(cfg.out_dir))
            results = cmd_gradcheck(args.instances, args.tolerance, cfg.seed)
            show_rows("🔍 Gradient checks", ["operation", "max_rel_error", "instances", "status"],
                      [(r.name, r.max_error, r.instances, "pass" if r.passed else "FAIL") for r in results])
            failed = [r.name for r in results if not r.passed]
            if failed:
                console.print(Panel(f"Failed: {', '.join(failed)}", title="❌ gradcheck", border_style="red"))
                return EXIT_CHECK_FAILED
            console.print(f"✅ All {len(results)} gradient checks passed")
    except (MldggError, FileNotFoundError, FileExistsError) as e:
        logger.error(str(e))
        return EXIT_INVALID
    except KeyboardInterrupt:
        console.print("\nInterrupted by user.")
        return EXIT_INVALID
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
