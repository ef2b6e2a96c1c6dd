"""Command line entry point: train, eval, mine, stats."""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import shlex
import statistics
import sys
from pathlib import Path

from .actor import ChatActor, ScriptedActor
from .core import SSOConfig, TrajectoryStore
from .embedding import CachedEmbedder, TrigramEmbedder
from .env import FAMILIES, SubprocessEnv, VariantSpec, make_env
from .errors import ConfigError, SkillSetLoadError, TransportError
from .generate import OfflineSkillWriter, Transcript
from .harness import SkillGenerator, emit_stats, evaluate, mine, read_stats, train
from .llm import Cassette, CassetteChatClient, OpenAIChatClient, OpenAIEmbeddings
from .skillset import SkillSet

log = logging.getLogger("sso")

EXIT_OK, EXIT_FAILURE, EXIT_CONFIG, EXIT_TRANSPORT = 0, 1, 2, 3
ADAPT_EPISODES = 5
TRANSFER_EPISODES = 30
TRANSFER_VARIANTS = tuple(range(10))
EVAL_ATTEMPTS = 10


def _seed_list(text: str) -> list[int]:
    """Parse "0,1,2" or "0-9" (or a mix) into a list of ints."""
    out: list[int] = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        lo, _, hi = part.partition("-")
        try:
            out.extend(range(int(lo), int(hi or lo) + 1))
        except ValueError:
            raise argparse.ArgumentTypeError(f"bad seed range {part!r}") from None
    if not out:
        raise argparse.ArgumentTypeError(f"no seeds in {text!r}")
    return out


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    group = p.add_argument_group("hyperparameters (override --config)")
    for f in dataclasses.fields(SSOConfig):
        kind = type(f.default)
        flag = "--" + f.name.replace("_", "-")
        group.add_argument(flag, dest=f"cfg_{f.name}", type=kind, default=None, metavar=kind.__name__.upper())


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--env", default="minilab", help=f"environment family ({', '.join(FAMILIES)})")
    p.add_argument("--env-command", help="run the environment as a line-JSON subprocess instead")
    p.add_argument("--variant-seeds", type=_seed_list, help='e.g. "0-9" or "0,3,5"')
    p.add_argument("--config", help="JSON file of SSOConfig fields")
    p.add_argument("--skills", help="skill set JSON to load")
    p.add_argument("--cassette", help="JSONL chat cassette")
    mode = p.add_mutually_exclusive_group()
    mode.add_argument("--record", dest="cassette_mode", action="store_const", const="record")
    mode.add_argument("--replay", dest="cassette_mode", action="store_const", const="replay")
    p.add_argument("--out", default="runs/latest", help="output directory")
    p.add_argument("--seed", type=int, default=0, help="actor seed")
    p.add_argument("--actor", choices=("scripted", "chat"), default="scripted")
    p.add_argument("--generator", choices=("offline", "chat"), default="offline")
    p.add_argument("--embedder", choices=("trigram", "openai"), default="trigram")
    p.add_argument("--model", default="gpt-4-0613", help="chat model id")
    p.add_argument("--embedding-model", default="text-embedding-ada-002")
    p.add_argument("--semantic-dedup", action="store_true", help="ask the generator to flag duplicate subgoals")
    p.add_argument("-v", "--verbose", action="count", default=0)
    _add_config_flags(p)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sso", description="Skill set optimization harness")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a skill set (adapt or transfer protocol)")
    _add_common(p)
    p.add_argument("--mode", choices=("adapt", "transfer"), default="transfer")
    p.add_argument("--iterations", type=int, help="episodes (default 5 per variant in adapt, 30 in transfer)")
    p.add_argument("--test-seeds", type=_seed_list, help="transfer: evaluate the frozen set on these variants")
    p.add_argument("--episodes", type=int, default=EVAL_ATTEMPTS, help="attempts per test variant")

    p = sub.add_parser("eval", help="evaluate a frozen skill set")
    _add_common(p)
    p.add_argument("--episodes", type=int, default=EVAL_ATTEMPTS, help="attempts per variant")

    p = sub.add_parser("mine", help="construct skills offline from a trajectory archive")
    _add_common(p)
    p.add_argument("--trajectories", required=True, help="trajectory JSONL archive")

    p = sub.add_parser("stats", help="summarize a stats.csv")
    p.add_argument("path", help="stats.csv or a run directory")
    p.add_argument("-v", "--verbose", action="count", default=0)
    return parser


def resolve_config(args: argparse.Namespace) -> SSOConfig:
    values: dict = {}
    if args.config:
        try:
            with open(args.config, encoding="utf-8") as fh:
                values = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from exc
        if not isinstance(values, dict):
            raise ConfigError("config file must hold a JSON object")
    for f in dataclasses.fields(SSOConfig):
        override = getattr(args, f"cfg_{f.name}", None)
        if override is not None:
            values[f.name] = override
    return SSOConfig.from_dict(values)


class Runtime:
    """Everything a subcommand needs, built from the parsed flags."""

    def __init__(self, args: argparse.Namespace, config: SSOConfig):
        self.args = args
        self.config = config
        self.out = Path(args.out)
        if args.env not in FAMILIES and not args.env_command:
            raise ConfigError(f"unknown environment family {args.env!r}; known: {sorted(FAMILIES)}")
        self.templates = FAMILIES[args.env].templates if args.env in FAMILIES else ()
        self.cassette = None
        if args.cassette:
            mode = args.cassette_mode or "record"
            try:
                self.cassette = Cassette(args.cassette, mode)
            except (FileNotFoundError, ValueError) as exc:
                raise ConfigError(str(exc)) from exc
        elif args.cassette_mode:
            raise ConfigError("--record/--replay need --cassette")
        self._live_chat = None

    def make_env(self):
        if self.args.env_command:
            return SubprocessEnv(shlex.split(self.args.env_command))
        return make_env(self.args.env)

    def _wrap(self, inner):
        if self.cassette is None:
            return inner
        return CassetteChatClient(self.cassette, inner)

    def live_chat(self):
        if self._live_chat is None:
            self._live_chat = OpenAIChatClient(self.args.model)
        return self._live_chat

    def embedder(self) -> CachedEmbedder:
        if self.args.embedder == "openai":
            return CachedEmbedder(OpenAIEmbeddings(self.args.embedding_model), self.out / "embeddings.npz")
        return CachedEmbedder(TrigramEmbedder())

    def actor(self, temperature: float, transcript: Transcript | None = None):
        if self.args.actor == "scripted":
            return ScriptedActor(self.args.seed)
        noop = getattr(FAMILIES.get(self.args.env), "noop_action", "wait")
        return ChatActor(self._wrap(self.live_chat()), temperature, noop, transcript)

    def generator(self) -> SkillGenerator:
        inner = OfflineSkillWriter() if self.args.generator == "offline" else self.live_chat()
        transcript = Transcript(self.out / "transcripts" / "generation.jsonl")
        return SkillGenerator(self._wrap(inner), self.config, self.templates, transcript, self.args.semantic_dedup)

    def variants(self, seeds, split="train") -> list[VariantSpec]:
        return [VariantSpec(self.args.env, s, split) for s in seeds]

    def load_skills(self) -> SkillSet:
        if not self.args.skills:
            return SkillSet(self.config)
        try:
            skillset = SkillSet.load(self.args.skills)
        except OSError as exc:
            raise ConfigError(f"cannot read skill set {self.args.skills}: {exc}") from exc
        skillset.config = self.config
        return skillset

    def reset_outputs(self) -> None:
        """Remove append-mode files from an earlier run into the same directory."""
        for path in (self.out / "transcripts").glob("*.jsonl"):
            path.unlink()


def _save_skills(skillset: SkillSet, out: Path, embedder: CachedEmbedder) -> None:
    out.mkdir(parents=True, exist_ok=True)
    skillset.save(out / "skills.json")
    (out / "skills.md").write_text(skillset.export_markdown(), encoding="utf-8")
    if embedder.cache_path is not None:
        embedder.save()


def _failure_code(failures) -> int:
    if any(isinstance(exc, TransportError) for _, exc in failures):
        return EXIT_TRANSPORT
    return EXIT_FAILURE if failures else EXIT_OK


def cmd_train(args: argparse.Namespace, rt: Runtime) -> int:
    rt.reset_outputs()
    embedder = rt.embedder()
    env = rt.make_env()
    generator = rt.generator()
    actor_log = Transcript(rt.out / "transcripts" / "actor.jsonl") if args.actor == "chat" else None
    failures: list = []
    (rt.out).mkdir(parents=True, exist_ok=True)
    (rt.out / "config.json").write_text(json.dumps(rt.config.to_dict(), indent=1) + "\n", encoding="utf-8")

    if args.mode == "adapt":
        seeds = args.variant_seeds or [0]
        episodes = args.iterations or ADAPT_EPISODES
        rows = []
        for seed in seeds:
            skillset = rt.load_skills()  # fresh per variant
            actor = rt.actor(rt.config.temp_train, actor_log)
            skillset, series = train(
                env, actor, skillset, rt.variants([seed]), episodes, generator, embedder, failures=failures
            )
            vdir = rt.out / f"variant-{seed}"
            emit_stats(series, skillset, vdir)
            _save_skills(skillset, vdir, embedder)
            rows += [(seed, s.iteration, s.episode_score) for s in series]
            best = max((s.episode_score for s in series), default=0.0)
            print(f"variant {seed}: best score {best:g} over {len(series)} attempts")
        with open(rt.out / "adapt.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["variant_seed", "attempt", "score"])
            w.writerows(rows)
        return _failure_code(failures)

    seeds = args.variant_seeds or list(TRANSFER_VARIANTS)
    episodes = TRANSFER_EPISODES if args.iterations is None else args.iterations
    skillset = rt.load_skills()
    actor = rt.actor(rt.config.temp_train, actor_log)
    skillset, series = train(env, actor, skillset, rt.variants(seeds), episodes, generator, embedder, failures=failures)
    emit_stats(series, skillset, rt.out)
    _save_skills(skillset, rt.out, embedder)
    scores = [s.episode_score for s in series]
    print(
        f"trained {len(series)}/{episodes} episodes; {len(skillset)} live skills; "
        f"mean score {statistics.fmean(scores) if scores else 0.0:.2f}"
    )
    if args.test_seeds:
        actor = rt.actor(rt.config.temp_test, actor_log)
        table = evaluate(env, actor, skillset, rt.variants(args.test_seeds, "test"), args.episodes, embedder)
        table.write_csv(rt.out / "eval.csv")
        print(f"test mean score {table.mean:.2f}")
    return _failure_code(failures)


def cmd_eval(args: argparse.Namespace, rt: Runtime) -> int:
    embedder = rt.embedder()
    skillset = rt.load_skills()
    env = rt.make_env()
    actor = rt.actor(rt.config.temp_test, None)
    seeds = args.variant_seeds or list(TRANSFER_VARIANTS)
    table = evaluate(env, actor, skillset, rt.variants(seeds, "test"), args.episodes, embedder)
    rt.out.mkdir(parents=True, exist_ok=True)
    table.write_csv(rt.out / "eval.csv")
    for seed, mean in table.per_variant.items():
        print(f"variant {seed}: {mean:.2f}")
    print(f"mean {table.mean:.2f}")
    expected = len(seeds) * args.episodes
    done = sum(len(v) for v in table.scores.values())
    return EXIT_OK if done == expected else EXIT_FAILURE


def cmd_mine(args: argparse.Namespace, rt: Runtime) -> int:
    rt.reset_outputs()
    embedder = rt.embedder()
    try:
        archive = TrajectoryStore.load_jsonl(args.trajectories)
    except (OSError, ValueError, KeyError) as exc:
        raise ConfigError(f"cannot read trajectories {args.trajectories}: {exc}") from exc
    skillset = rt.load_skills()
    try:
        created = mine(skillset, list(archive), rt.generator(), embedder)
    except ValueError as exc:  # e.g. trajectory ids already in the loaded set
        raise ConfigError(str(exc)) from exc
    _save_skills(skillset, rt.out, embedder)
    print(f"mined {len(created)} skills from {len(archive)} trajectories")
    return EXIT_OK


def cmd_stats(args: argparse.Namespace) -> int:
    path = Path(args.path)
    if path.is_dir():
        path = path / "stats.csv"
    try:
        series = read_stats(path)
    except (OSError, KeyError, ValueError) as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    created = sum(s.skills_created for s in series)
    pruned = sum(s.skills_pruned for s in series)
    final = series[-1].skill_set_size if series else 0
    scores = [s.episode_score for s in series]
    print(f"iterations        {len(series)}")
    print(f"skills created    {created}")
    print(f"skills pruned     {pruned}")
    print(f"final size        {final} ({'consistent' if final == created - pruned else 'INCONSISTENT'})")
    if scores:
        head, tail = scores[:10], scores[-10:]
        print(f"mean score        {statistics.fmean(scores):.2f}")
        print(f"first 10 / last 10 {statistics.fmean(head):.2f} / {statistics.fmean(tail):.2f}")
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "stats":
            return cmd_stats(args)
        config = resolve_config(args)
        rt = Runtime(args, config)
        if args.command == "train":
            return cmd_train(args, rt)
        if args.command == "eval":
            return cmd_eval(args, rt)
        return cmd_mine(args, rt)
    except (ConfigError, SkillSetLoadError) as exc:
        log.error("%s", exc)
        return EXIT_CONFIG
    except TransportError as exc:
        log.error("%s", exc)
        return EXIT_TRANSPORT


if __name__ == "__main__":
    sys.exit(main())
