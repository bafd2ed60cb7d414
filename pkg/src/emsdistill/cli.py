"""Command-line entry point: ``emsdistill <subcommand> [options]``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from pathlib import Path

from .errors import DataError, NumericError

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def read_config(path) -> dict:
    """``key=value`` lines; ``#`` starts a comment; keys may use dashes or underscores."""
    out = {}
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise DataError(f"cannot read config {path}: {exc}") from None
    for n, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{n}: expected key=value, got {raw!r}")
        k, v = line.split("=", 1)
        out[k.strip().replace("-", "_")] = v.strip()
    return out


def _ints(text: str) -> list[int]:
    return [int(x) for x in str(text).replace(",", " ").split()]


def _strs(text: str) -> list[str]:
    return [x for x in str(text).replace(",", " ").split()]


def _global(p: argparse.ArgumentParser, suppress: bool) -> None:
    d = argparse.SUPPRESS if suppress else None
    g = p.add_argument_group("global options")
    g.add_argument("--config", default=d, help="key=value file with option defaults")
    g.add_argument("--seed", type=int, default=d if suppress else 0)
    g.add_argument("--out-dir", default=d if suppress else ".")
    g.add_argument("--jobs", type=int, default=d if suppress else 1)


def build_parser() -> argparse.ArgumentParser:
    from .dt.model import SIZES

    ap = _Parser(prog="emsdistill", description=__doc__.splitlines()[0])
    _global(ap, suppress=False)
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def cmd(name, help_):
        p = sub.add_parser(name, help=help_)
        _global(p, suppress=True)
        return p

    p = cmd("ingest", "register building/price CSVs in a data workspace (--out-dir)")
    p.add_argument("--building-csv", action="append", required=True)
    p.add_argument("--price-csv", required=True)
    p.add_argument("--building-id", action="append")
    p.add_argument("--price-scale", type=float, default=1.0, help="0.001 converts EUR/MWh to EUR/kWh")
    p.add_argument("--capacity", type=float, help="battery capacity in kWh (default: mean daily PV surplus)")
    p.add_argument("--power", type=float, help="battery power in kW (default: capacity / 4)")
    p.add_argument("--eval-weeks", type=int, default=4)

    p = cmd("synth", "write a synthetic data workspace (--out-dir)")
    p.add_argument("--buildings", type=int, default=5)
    p.add_argument("--weeks", type=int, default=8)
    p.add_argument("--profile", default="arbitrage", choices=["default", "arbitrage", "flat"])
    p.add_argument("--eval-weeks", type=int, default=4)

    p = cmd("gen-data", "roll out a behaviour policy on the training split and write trajectory JSONL")
    p.add_argument("--data", required=True, help="data workspace directory")
    p.add_argument("--buildings", type=_strs)
    p.add_argument("--seeds", type=_ints, help="episode seeds (default: --seed)")
    p.add_argument("--sigma", type=float, default=0.3, help="noise std as a fraction of the action bound")
    p.add_argument("--policy", default="rule_based", choices=["rule_based", "ddpg"])
    p.add_argument("--actors", help="directory with ddpg_<building>.ckpt files (for --policy ddpg)")
    p.add_argument("--split", default="train", choices=["train", "eval", "all"])
    p.add_argument("--out", required=True)

    p = cmd("train-ddpg", "train a DDPG actor for one building")
    p.add_argument("--data", required=True)
    p.add_argument("--building", required=True)
    p.add_argument("--steps", type=int, default=20000)
    p.add_argument("--out", required=True)

    p = cmd("train-dt", "train a Decision Transformer on a trajectory dataset")
    p.add_argument("--dataset", required=True)
    p.add_argument("--size", default="tiny", choices=sorted(SIZES))
    p.add_argument("--context", type=int, default=96)
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--wd", type=float, default=1e-4)
    p.add_argument("--batch", type=int, default=32)
    p.add_argument("--patience", type=int, default=500)
    p.add_argument("--max-steps", type=int, default=20000)
    p.add_argument("--eval-every", type=int, default=25)
    p.add_argument("--max-timestep", type=int, default=None)
    p.add_argument("--out", required=True)

    p = cmd("distill", "distil a trained DT teacher into a student")
    p.add_argument("--teacher", required=True)
    p.add_argument("--student-size", default="tiny", choices=sorted(SIZES))
    p.add_argument("--dataset", required=True)
    p.add_argument("--beta", type=float, default=1.0)
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--wd", type=float, default=1e-4)
    p.add_argument("--batch", type=int, default=32)
    p.add_argument("--patience", type=int, default=500)
    p.add_argument("--max-steps", type=int, default=20000)
    p.add_argument("--eval-every", type=int, default=25)
    p.add_argument("--final-only", action="store_true", help="match only the last timestep of each window")
    p.add_argument("--cache", help="teacher logit cache file")
    p.add_argument("--out", required=True)

    p = cmd("oracle", "perfect-foresight schedule as CSV")
    p.add_argument("--data", required=True)
    p.add_argument("--building", required=True)
    p.add_argument("--grid", type=int, default=1025)
    p.add_argument("--split", default="eval", choices=["train", "eval", "all"])
    p.add_argument("--out", help="CSV path (default: stdout)")

    p = cmd("eval", "roll out a DT checkpoint on the evaluation split")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--buildings", type=_strs)
    p.add_argument("--target-scale", type=float, default=0.9)
    p.add_argument("--target", type=float, help="fixed initial Cost-to-Go for every building")
    p.add_argument("--out", help="CSV path (default: stdout)")

    p = cmd("bench", "run an experiment plan (resumable) into --out-dir")
    p.add_argument("--data", required=True)
    p.add_argument("--plan", help="plan JSON; other plan flags are ignored when given")
    p.add_argument("--buildings", type=_strs)
    p.add_argument("--seeds", type=_ints, default=[42, 1894, 314159])
    p.add_argument("--policies", type=_strs, default=["no_battery", "rule_based", "oracle", "dt:tiny"])
    p.add_argument("--context", type=int, default=32)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--train-steps", type=int, default=300)
    p.add_argument("--kd-steps", type=int, default=2000)
    p.add_argument("--grid", type=int, default=1025)
    p.add_argument("--latency", action="store_true", help="also time DT policies (single-threaded)")

    p = cmd("report", "render tables from a bench --out-dir")
    p.add_argument("--format", default="markdown", choices=["markdown", "csv"])
    return ap


def _apply_config(ap: argparse.ArgumentParser, argv: list[str]) -> argparse.Namespace:
    # pre-scan so config values can satisfy required options
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    cfg_path = known.config
    choices = ap._subparsers._group_actions[0].choices  # noqa: SLF001
    command = next((a for a in argv if a in choices), None)
    if not cfg_path or command is None:
        return _fill_globals(ap.parse_args(argv))
    cfg = read_config(cfg_path)
    sub = choices[command]
    actions = {a.dest: a for a in sub._actions}  # noqa: SLF001
    defaults = {}
    for k, v in cfg.items():
        if k not in actions:
            raise UsageError(f"{cfg_path}: unknown option {k!r} for {command}")
        a = actions[k]
        if isinstance(a, argparse._StoreTrueAction):  # noqa: SLF001
            defaults[k] = v.lower() in ("1", "true", "yes", "on")
        else:
            defaults[k] = a.type(v) if a.type else v
    sub.set_defaults(**defaults)
    for a in sub._actions:  # noqa: SLF001
        if a.dest in defaults:
            a.required = False
    return _fill_globals(ap.parse_args(argv))


def _fill_globals(args):
    for k, v in (("seed", 0), ("out_dir", "."), ("jobs", 1), ("config", None)):
        if getattr(args, k, None) is None:
            setattr(args, k, v)
    return args


# --- commands --------------------------------------------------------------

def _ingest(a):
    from .data import BatterySpec, derive_battery_spec, load_bundle, split_windows
    from .workspace import MANIFEST, read_manifest, write_manifest

    root = Path(a.out_dir)
    ids = a.building_id or []
    if ids and len(ids) != len(a.building_csv):
        raise UsageError("give one --building-id per --building-csv")
    entries = read_manifest(root) if (root / MANIFEST).exists() else []
    for i, bcsv in enumerate(a.building_csv):
        bundle = load_bundle(bcsv, a.price_csv, ids[i] if ids else None, a.price_scale)
        train, _ = split_windows(bundle, a.eval_weeks)
        if a.capacity is not None:
            spec = BatterySpec(a.capacity, a.power if a.power is not None else a.capacity / 4.0)
        else:
            spec = derive_battery_spec(train)
        entry = {"building_id": bundle.building_id, "building_csv": str(Path(bcsv).resolve()),
                 "price_csv": str(Path(a.price_csv).resolve()), "price_scale": a.price_scale,
                 "battery": spec.to_dict()}
        entries = [e for e in entries if e["building_id"] != bundle.building_id] + [entry]
        print(f"{bundle.building_id}: {len(bundle)} slots, capacity {spec.capacity_max:.3f} kWh, "
              f"power {spec.power_max:.3f} kW")
    write_manifest(root, entries)


def _synth(a):
    from .data import SLOTS_PER_WEEK, derive_battery_spec, split_windows, synth_bundle
    from .workspace import add_bundle, write_manifest

    root = Path(a.out_dir)
    entries = []
    for i in range(a.buildings):
        b = synth_bundle(a.seed + i, a.weeks * 7, a.profile)
        train, _ = split_windows(b, a.eval_weeks)
        if a.profile == "flat":
            from .data import BatterySpec
            spec = BatterySpec(4.0, 2.0)
        else:
            spec = derive_battery_spec(train)
        entries.append(add_bundle(root, b, spec))
    write_manifest(root, entries)
    print(f"wrote {a.buildings} buildings x {a.weeks * SLOTS_PER_WEEK} slots to {root}")


def _gen_data(a):
    from .baselines.dataset import ActorFactory, generate_offline_dataset
    from .workspace import load_buildings

    bs = load_buildings(a.data, a.buildings)
    configs = [b.env(a.split) for b in bs]
    seeds = a.seeds or [a.seed]
    factory, name = None, "rule_based"
    if a.policy == "ddpg":
        if not a.actors:
            raise UsageError("--policy ddpg needs --actors")
        actors = {}
        for b in bs:
            p = Path(a.actors) / f"ddpg_{b.building_id}.ckpt"
            if not p.exists():
                raise DataError(f"missing DDPG actor {p}")
            actors[b.building_id] = p.read_bytes()
        factory, name = ActorFactory(actors), "ddpg"
    trajs = generate_offline_dataset(a.out, configs, seeds, a.sigma, factory, name, a.jobs)
    print(f"wrote {len(trajs)} episodes to {a.out}")


def _train_ddpg(a):
    from .baselines.ddpg import DDPGConfig, ddpg_train
    from .workspace import load_buildings

    (b,) = load_buildings(a.data, [a.building])
    res = ddpg_train(b.env("train"), DDPGConfig(train_steps=a.steps, seed=a.seed))
    res.actor.save(a.out)
    tail = res.critic_losses[-100:]
    print(f"saved actor to {a.out}; final critic loss {sum(tail) / max(len(tail), 1):.4g}")


def _train_dt(a):
    from .dt.model import DEFAULT_MAX_TIMESTEP, DTConfig
    from .dt.train import TrainConfig, save_dt, train_dt, train_meta
    from .env import read_jsonl

    trajs = read_jsonl(a.dataset)
    if not trajs:
        raise DataError(f"{a.dataset} holds no episodes")
    max_t = a.max_timestep or max(DEFAULT_MAX_TIMESTEP, max(len(t) for t in trajs))
    cfg = DTConfig.from_size(a.size, context_length=a.context, state_dim=trajs[0].states.shape[1], max_timestep=max_t)
    hp = TrainConfig(lr=a.lr, weight_decay=a.wd, batch_size=a.batch, max_steps=a.max_steps, patience=a.patience,
                     eval_every=a.eval_every, seed=a.seed)
    res = train_dt(trajs, cfg, hp)
    save_dt(a.out, res.model, res.standardizer, train_meta(res, hp))
    print(f"saved {a.size} DT ({res.model.count_params()} params) to {a.out}; "
          f"best val MSE {res.best_val:.4g} at step {res.best_step}")


def _distill(a):
    from .distill import KDConfig, Teacher, distill, kd_meta
    from .dt.model import DTConfig
    from .dt.train import save_dt
    from .env import read_jsonl

    teacher = Teacher.load(a.teacher)
    tcfg = teacher.model.cfg
    scfg = DTConfig.from_size(a.student_size, context_length=tcfg.context_length, state_dim=tcfg.state_dim,
                              max_timestep=tcfg.max_timestep)
    cfg = KDConfig(student=scfg, beta=a.beta, lr=a.lr, weight_decay=a.wd, batch_size=a.batch, max_steps=a.max_steps,
                   patience=a.patience, eval_every=a.eval_every, final_only=a.final_only, seed=a.seed)
    res = distill(cfg, teacher, read_jsonl(a.dataset), cache_path=a.cache)
    save_dt(a.out, res.student, res.standardizer, kd_meta(res, cfg, teacher))
    print(f"saved {a.student_size} student to {a.out}; held-out Smooth L1 {res.initial_val:.4g} -> "
          f"{res.best_val:.4g}, mean |z_S - z_T| {res.val_abs_kwh:.4g} kWh")


def _emit(text: str, out) -> None:
    if out:
        Path(out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def _oracle(a):
    from .oracle import OracleConfig, dp_optimal_schedule
    from .workspace import load_buildings

    (b,) = load_buildings(a.data, [a.building])
    sched = dp_optimal_schedule(OracleConfig(b.env(a.split), a.grid))
    _emit(sched.to_csv(), a.out)


def _eval(a):
    from .dt.policy import DTPolicy, default_target
    from .dt.train import load_dt
    from .env import rollout
    from .workspace import load_buildings

    model, std, extra = load_dt(a.ckpt)
    best = extra.get("behaviour_best", {})
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["building_id", "target", "cost_eur"])
    costs = []
    for b in load_buildings(a.data, a.buildings):
        if a.target is not None:
            tgt = a.target
        elif b.building_id in best:
            tgt = default_target(best[b.building_id], a.target_scale)
        else:
            raise DataError(f"no behaviour cost for {b.building_id} in checkpoint; pass --target")
        c = rollout(b.env("eval"), DTPolicy(model, std, tgt), "dt", a.seed).total_cost
        costs.append(c)
        w.writerow([b.building_id, repr(tgt), repr(c)])
    if costs:
        w.writerow(["mean", "", repr(sum(costs) / len(costs))])
    _emit(buf.getvalue(), a.out)


def _bench(a):
    from .bench import ExperimentPlan, run_plan
    from .workspace import read_manifest

    if a.plan:
        plan = ExperimentPlan.from_json(Path(a.plan).read_text())
    else:
        ids = a.buildings or [e["building_id"] for e in read_manifest(a.data)]
        plan = ExperimentPlan(buildings=ids, seeds=a.seeds, policies=a.policies, context=a.context, lr=a.lr,
                              train_steps=a.train_steps, kd_steps=a.kd_steps, oracle_grid=a.grid,
                              measure_latency=a.latency)
    report = run_plan(plan, a.data, a.out_dir, a.jobs)
    _write_report(report, Path(a.out_dir))
    sys.stdout.write(report.to_markdown())
    print(f"{report.meta['computed']} new computations; {len(report.meta['failed'])} failed entries")
    if report.meta["failed"]:
        raise DataError(f"failed ledger entries: {report.meta['failed']}")


def _write_report(report, out: Path) -> None:
    from .bench import best_per_building

    (out / "results.csv").write_text(report.to_csv())
    (out / "results.md").write_text(report.to_markdown())
    (out / "aggregate.json").write_text(json.dumps(report.aggregate(), indent=1))
    (out / "winners.json").write_text(json.dumps(best_per_building(report), indent=1))


def _report(a):
    from .bench import EvalReport

    out = Path(a.out_dir)
    if not (out / "plan.json").exists():
        raise DataError(f"{out} is not a bench output directory (no plan.json)")
    if not (out / "results.csv").exists():
        raise DataError(f"{out}/results.csv missing; run `emsdistill bench` first")
    report = EvalReport.from_csv((out / "results.csv").read_text())
    _emit(report.to_markdown() if a.format == "markdown" else report.to_csv(), None)


COMMANDS = {"ingest": _ingest, "synth": _synth, "gen-data": _gen_data, "train-ddpg": _train_ddpg,
            "train-dt": _train_dt, "distill": _distill, "oracle": _oracle, "eval": _eval, "bench": _bench,
            "report": _report}


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    ap = build_parser()
    try:
        args = _apply_config(ap, argv)
        COMMANDS[args.command](args)
    except SystemExit as exc:
        return int(exc.code or 0)
    except UsageError as exc:
        print(f"emsdistill: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericError as exc:
        print(f"emsdistill: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, FileNotFoundError) as exc:
        print(f"emsdistill: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as exc:
        print(f"emsdistill: invalid argument: {exc}", file=sys.stderr)
        return EXIT_USAGE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
