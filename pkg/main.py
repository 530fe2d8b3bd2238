"""Command-line entry point: one subcommand per workflow."""

import argparse
import asyncio
import logging
import sys
from pathlib import Path
from typing import Any, Dict, Iterator, List, Optional

from dotenv import load_dotenv

from agents.orchestrator import OrchestratorAgent
from evaluation.report import RunWriter, corpus_report
from ingest.video import FrameExtractor
from models.config import AppConfig, GridConfig, load_config
from models.errors import ConfigError, RehabLabError
from models.fma import load_fma_clips, load_fma_scripts
from models.manifest import RunManifest, load_manifest
from vlm.backends import build_backend
from vlm.client import VLMClient

logger = logging.getLogger("rehabagentlab")

EXIT_CODES = {"config": 2, "manifest": 2, "backend": 3, "extraction": 4}
DEFAULT_CONFIG = Path("config.yaml")


def exit_code(category: str) -> int:
    return EXIT_CODES.get(category, 1)


def build_config(args: argparse.Namespace) -> AppConfig:
    """Flags override the config file, which overrides the built-in defaults."""
    overrides: Dict[str, Any] = {}
    backend = {k: v for k, v in (("provider", args.backend), ("base_url", args.base_url)) if v is not None}
    if backend:
        overrides["backend"] = backend
    runtime = {
        k: v for k, v in (("parallelism", args.parallelism), ("seed", args.seed), ("output_dir", args.out))
        if v is not None
    }
    if runtime:
        overrides["runtime"] = runtime
    path = args.config
    if path is None and DEFAULT_CONFIG.exists():
        path = DEFAULT_CONFIG
    return load_config(path, overrides)


def _manifest(args: argparse.Namespace, require_video: bool) -> RunManifest:
    if args.manifest is None:
        raise ConfigError(f"{args.cmd} needs --manifest")
    manifest = load_manifest(args.manifest)
    manifest.validate_paths(require_video=require_video)
    return manifest


def _failure_categories(failures: Any) -> Iterator[str]:
    if isinstance(failures, dict):
        if "category" in failures and "error" in failures:
            yield failures["category"]
            return
        for value in failures.values():
            yield from _failure_categories(value)


def _task(args: argparse.Namespace, config: AppConfig) -> Dict[str, Any]:
    """Validate every input the workflow reads before any backend call."""
    cmd = args.cmd
    if cmd == "activity-id":
        return {"workflow": "activity", "manifest": _manifest(args, True), "prompt_variant": args.variant}
    if cmd == "infer-primitives":
        layouts = args.grid or (config.primitives.sweep_grids if args.sweep else None)
        grids = [GridConfig.parse(g) for g in layouts] if layouts else None
        return {"workflow": "infer_primitives", "manifest": _manifest(args, True), "mode": args.mode,
                "cropping": args.crop, "grids": grids}
    if cmd == "primrs":
        return {"workflow": "primrs", "manifest": _manifest(args, True), "cropping": not args.no_crop,
                "postprocessing": not args.no_postprocess}
    if cmd == "baseline":
        return {"workflow": "baseline", "manifest": _manifest(args, False), "kind": args.kind}
    if cmd == "fma":
        return {"workflow": "fma", "clips": args.clips, "scripts": args.scripts, "method": args.method}
    if cmd == "metrics":
        return {"workflow": "metrics", "manifest": _manifest(args, False), "predictions": args.predictions}
    if cmd == "probe":
        return {"workflow": "probe", "manifest": _manifest(args, True)}
    raise ConfigError(f"unknown command: {cmd}")


async def run_workflow(args: argparse.Namespace, config: AppConfig) -> int:
    task = _task(args, config)
    if task["workflow"] == "fma":
        # fail on bad scripts or clips before the backend is built
        load_fma_clips(task["clips"])
        load_fma_scripts(task["scripts"])

    backend = build_backend(config.backend)
    client = VLMClient(backend, config.backend, concurrency=config.runtime.request_concurrency)
    orchestrator = OrchestratorAgent(config, client, FrameExtractor(config.extraction))
    result = await orchestrator.execute_task({**task, "out_dir": config.runtime.output_dir})

    if not result["success"]:
        logger.error("%s failed (%s): %s", task["workflow"], result["category"], result["error"])
        return exit_code(result["category"])
    categories = list(_failure_categories(result.get("failures", {})))
    if categories:
        logger.error("%d item(s) failed; see %s/run_summary.json", len(categories), result["out_dir"])
        return exit_code(categories[0])
    logger.info("Run %s written to %s", result["run_id"], result["out_dir"])
    return 0


def cmd_report(args: argparse.Namespace, config: AppConfig) -> int:
    table = corpus_report(args.runs)
    out = Path(args.out or config.runtime.output_dir)
    RunWriter(out).write_csv(table, "report.csv")
    print(table.to_string(index=False, max_cols=12))
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="rehabagentlab", description=__doc__)
    ap.add_argument("--config", type=Path, default=None, help="YAML config (default: ./config.yaml if present)")
    ap.add_argument("--manifest", type=Path, default=None, help="Run manifest CSV")
    ap.add_argument("--backend", choices=["openai", "anthropic", "mock", "replay"], default=None)
    ap.add_argument("--base-url", default=None, help="OpenAI-compatible endpoint URL")
    ap.add_argument("--parallelism", type=int, default=None, help="Videos in flight")
    ap.add_argument("--seed", type=int, default=None)
    ap.add_argument("--out", type=Path, default=None, help="Output directory")
    ap.add_argument("--log-level", default="INFO", choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    sp = ap.add_subparsers(dest="cmd", required=True)

    ap_act = sp.add_parser("activity-id", help="Nine-class activity identification")
    ap_act.add_argument("--variant", choices=["direct", "optimized"], default=None)

    ap_prim = sp.add_parser("infer-primitives", help="Segment-wise primitive inference")
    ap_prim.add_argument("--mode", choices=["single", "decomposed", "contextual"], default="decomposed")
    ap_prim.add_argument("--crop", action="store_true", help="Pose-informed hand cropping")
    ap_prim.add_argument("--grid", action="append", default=None,
                         help="Sampling grid f:n; repeat for a sweep (one sub-run per grid)")
    ap_prim.add_argument("--sweep", action="store_true", help="Run every grid in primitives.sweep_grids")

    ap_rs = sp.add_parser("primrs", help="PRIM-RS pipeline for RTT/shelf videos")
    ap_rs.add_argument("--no-crop", action="store_true")
    ap_rs.add_argument("--no-postprocess", action="store_true")

    ap_base = sp.add_parser("baseline", help="Annotation-derived baselines")
    ap_base.add_argument("kind", choices=["markov", "omniscient"])

    ap_fma = sp.add_parser("fma", help="Fugl-Meyer item scoring")
    ap_fma.add_argument("method", choices=["qa", "cot"])
    ap_fma.add_argument("--clips", type=Path, required=True, help="FMA clip manifest CSV")
    ap_fma.add_argument("--scripts", type=Path, required=True, help="Question script CSV")

    ap_met = sp.add_parser("metrics", help="Score stored predictions against annotations")
    ap_met.add_argument("--predictions", type=Path, required=True, help="Run directory with predictions/")

    ap_probe = sp.add_parser("probe", help="Diagnostic probes")
    ap_probe.add_argument("probe", choices=["cross-hand"])

    ap_rep = sp.add_parser("report", help="Aggregate metrics of finished runs")
    ap_rep.add_argument("runs", type=Path, nargs="+")
    return ap


def main(argv: Optional[List[str]] = None) -> int:
    load_dotenv()
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=getattr(logging, args.log_level),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    try:
        config = build_config(args)
        if args.cmd == "report":
            return cmd_report(args, config)
        return asyncio.run(run_workflow(args, config))
    except RehabLabError as e:
        logger.error("%s error: %s", e.category, e)
        return exit_code(e.category)


if __name__ == "__main__":
    sys.exit(main())
