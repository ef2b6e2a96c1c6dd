"""Episodic text environments: a small interface plus two bundled toy worlds.

MiniLab is a kitchen-science task (measure a melting point) whose reward
hinges on the unintuitive ``focus on`` action. MiniVault is a grid world
driven by single-character commands (key, locked door, staircase).

External environments can be plugged in through :class:`SubprocessEnv`,
which speaks line-delimited JSON::

    -> {"type": "reset", "family": "...", "seed": 7, "split": "train"}
    -> {"type": "step", "action": "go kitchen"}
    <- {"text": "...", "templates": [...], "reward": 0.0, "done": false,
        "score": 0.0, "actions": [...], "task": "..."}

``actions`` (concrete valid actions) and ``task`` are optional.
"""

from __future__ import annotations

import json
import random
import subprocess
import sys
from dataclasses import dataclass, field
from typing import IO, Optional, Protocol, Sequence

from .errors import ConfigError, EnvError

NO_EFFECT = "It's not clear how to do that."
MAX_STEPS = 40


@dataclass(frozen=True)
class EnvObservation:
    text: str
    admissible_action_templates: tuple[str, ...]
    reward: float = 0.0
    done: bool = False
    score: float = 0.0
    valid_actions: tuple[str, ...] = ()

    def to_json(self) -> dict:
        return {
            "text": self.text,
            "templates": list(self.admissible_action_templates),
            "reward": self.reward,
            "done": self.done,
            "score": self.score,
            "actions": list(self.valid_actions),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "EnvObservation":
        return cls(
            text=obj["text"],
            admissible_action_templates=tuple(obj.get("templates", ())),
            reward=float(obj.get("reward", 0.0)),
            done=bool(obj.get("done", False)),
            score=float(obj.get("score", 0.0)),
            valid_actions=tuple(obj.get("actions", ())),
        )


@dataclass(frozen=True)
class VariantSpec:
    family: str
    seed: int
    split: str = "train"

    def __post_init__(self):
        if self.split not in ("train", "test"):
            raise ConfigError(f"split must be train or test, got {self.split!r}")


class Environment(Protocol):
    task_description: str
    noop_action: str

    def reset(self, variant: VariantSpec) -> EnvObservation: ...

    def step(self, action: str) -> EnvObservation: ...


class _Episode:
    """Step counting, score bookkeeping and the done contract."""

    family = ""
    templates: tuple[str, ...] = ()
    noop_action = "wait"

    def __init__(self, max_steps: int = MAX_STEPS):
        self.max_steps = max_steps
        self.score = 0.0
        self.steps = 0
        self.done = True
        self.task_description = ""

    def _check_family(self, variant: VariantSpec) -> None:
        if variant.family != self.family:
            raise ConfigError(f"{type(self).__name__} cannot run family {variant.family!r}")

    def _start(self, text: str) -> EnvObservation:
        self.score = 0.0
        self.steps = 0
        self.done = False
        return EnvObservation(text, self.templates, 0.0, False, 0.0, self.valid_actions())

    def step(self, action: str) -> EnvObservation:
        if self.done:
            raise EnvError("episode is over; call reset()")
        feedback, reward, finished = self._apply(" ".join(action.strip().lower().split()))
        self.steps += 1
        self.score += reward
        self.done = finished or self.steps >= self.max_steps
        text = f"{feedback}\n{self.describe()}"
        return EnvObservation(text, self.templates, reward, self.done, self.score, self.valid_actions())

    def _apply(self, action: str) -> tuple[str, float, bool]:
        raise NotImplementedError

    def describe(self) -> str:
        raise NotImplementedError

    def valid_actions(self) -> tuple[str, ...]:
        raise NotImplementedError


# MiniLab

ROOMS = ("hallway", "kitchen", "art studio", "greenhouse", "bathroom")
SUBSTANCES = ("lead", "tin", "gallium", "chocolate", "wax", "butter", "ice", "sodium")
CONTAINERS = ("ceramic cup", "glass jar", "metal pot", "clay bowl")
DISTRACTORS = ("painting", "lighter", "stopwatch", "orange", "shovel", "soap", "apple", "bee hive")
RECEPTACLES = ("stove", "table", "sink")
DEVICES = ("stove", "sink")

MINILAB_TEMPLATES = (
    "look around",
    "go OBJ",
    "focus on OBJ",
    "move OBJ to OBJ",
    "activate OBJ",
    "deactivate OBJ",
    "read OBJ",
    "wait",
)

REWARD_FOCUS_THERMOMETER = 10.0
REWARD_SUBSTANCE_ON_STOVE = 30.0
REWARD_READ_MELTED = 60.0
MELT_TICKS = 2


def minilab_reward_schedule(variant: VariantSpec | None = None) -> dict[str, float]:
    """Subgoal rewards; identical for every variant and summing to 100."""
    return {
        "focus on the thermometer": REWARD_FOCUS_THERMOMETER,
        "focused substance on the activated stove": REWARD_SUBSTANCE_ON_STOVE,
        "read the thermometer after the substance melts": REWARD_READ_MELTED,
    }


@dataclass
class MiniLabLayout:
    substance: str
    container: str
    start: str
    adjacency: dict[str, tuple[str, ...]]
    distractors: dict[str, str] = field(default_factory=dict)

    @classmethod
    def from_seed(cls, seed: int) -> "MiniLabLayout":
        rng = random.Random(f"minilab-{seed}")
        substance = rng.choice(SUBSTANCES)
        container = rng.choice(CONTAINERS)
        others = [r for r in ROOMS if r != "hallway"]
        rng.shuffle(others)
        # star around the hallway, except one room hangs off another room
        edges = {(min("hallway", r), max("hallway", r)) for r in others[:-1]}
        leaf, anchor = others[-1], rng.choice(others[:-1])
        edges.add((min(leaf, anchor), max(leaf, anchor)))
        adjacency = {r: tuple(sorted({b for a, b in edges if a == r} | {a for a, b in edges if b == r})) for r in ROOMS}
        start = rng.choice([r for r in ROOMS if r != "kitchen"])
        distractors = {d: rng.choice(ROOMS) for d in rng.sample(DISTRACTORS, 4)}
        return cls(substance, container, start, adjacency, distractors)


class MiniLab(_Episode):
    """Measure the melting point of a substance found in the kitchen."""

    family = "minilab"
    templates = MINILAB_TEMPLATES

    def __init__(self, max_steps: int = MAX_STEPS):
        super().__init__(max_steps)
        self.layout: Optional[MiniLabLayout] = None

    def reset(self, variant: VariantSpec) -> EnvObservation:
        self._check_family(variant)
        lay = self.layout = MiniLabLayout.from_seed(variant.seed)
        self.room = lay.start
        # where each portable object currently sits: (room, receptacle or None)
        self.places: dict[str, tuple[str, Optional[str]]] = {
            "thermometer": ("kitchen", "table"),
            lay.substance: ("kitchen", "table"),
        }
        for obj, room in lay.distractors.items():
            self.places[obj] = (room, None)
        self.active = {"stove": False, "sink": False}
        self.focused: set[str] = set()
        self.heat = 0
        self.awarded: set[str] = set()
        self.task_description = (
            f"Your task is to measure the melting point of {lay.substance}, which is located around the kitchen. "
            f"First, focus on the thermometer. Next, focus on the {lay.substance}. "
            f"Heat the {lay.substance} on the stove and read the thermometer once it melts."
        )
        return self._start(f"You find yourself in the {self.room}.\n{self.describe()}")

    # world queries

    @property
    def substance(self) -> str:
        return self.layout.substance

    def melted(self) -> bool:
        return self.heat >= MELT_TICKS

    def _here(self, obj: str) -> bool:
        return self.places.get(obj, ("", None))[0] == self.room

    def visible_objects(self) -> list[str]:
        objs = [o for o in self.places if self._here(o)]
        if self.room == "kitchen":
            objs += list(RECEPTACLES)
        return sorted(set(objs))

    def valid_actions(self) -> tuple[str, ...]:
        if self.layout is None:
            return ()
        acts = ["look around", "wait"]
        acts += [f"go {r}" for r in self.layout.adjacency[self.room]]
        visible = self.visible_objects()
        acts += [f"focus on {o}" for o in visible]
        portables = [o for o in visible if o in self.places]
        receptacles = [r for r in RECEPTACLES if r in visible]
        acts += [f"move {o} to {r}" for o in portables for r in receptacles if self.places[o][1] != r]
        for d in DEVICES:
            if d in visible:
                acts.append(f"deactivate {d}" if self.active[d] else f"activate {d}")
        if "thermometer" in visible:
            acts.append("read thermometer")
        return tuple(acts)

    def _object_phrase(self, obj: str) -> str:
        if obj == self.substance:
            state = "liquid " if self.melted() else ""
            return f"a {self.layout.container} (containing a substance called {state}{obj})"
        if obj == "thermometer":
            return f"a thermometer, currently reading a temperature of {self._temperature()} degrees celsius"
        return f"a {obj}"

    def _temperature(self) -> int:
        on_stove = self.places[self.substance][1] == "stove" and self.active["stove"]
        return 10 + (40 * self.heat if on_stove else 0)

    def describe(self) -> str:
        parts = [f"This room is called the {self.room}. In it, you see: the agent"]
        loose = [o for o in sorted(self.places) if self._here(o) and self.places[o][1] is None]
        if self.room == "kitchen":
            for r in RECEPTACLES:
                contents = [self._object_phrase(o) for o in sorted(self.places) if self.places[o] == ("kitchen", r)]
                inside = ", ".join(contents) if contents else "nothing"
                if r in DEVICES:
                    status = "turned on" if self.active[r] else "turned off"
                    parts.append(f"a {r}, which is {status}. On the {r} is: {inside}")
                else:
                    parts.append(f"a {r}. On the {r} is: {inside}")
        parts += [self._object_phrase(o) for o in loose]
        doors = ", ".join(f"A door to the {r} (that is open)" for r in self.layout.adjacency[self.room])
        return "; ".join(parts) + f"; You also see: {doors}"

    # transitions

    def _award(self, key: str, amount: float) -> float:
        if key in self.awarded:
            return 0.0
        self.awarded.add(key)
        return amount

    def _apply(self, action: str) -> tuple[str, float, bool]:
        visible = self.visible_objects()
        reward = 0.0
        finished = False
        feedback = NO_EFFECT

        if action in ("look around", "look"):
            feedback = "You look around."
        elif action == "wait":
            feedback = "You decide to wait for 1 iteration."
        elif action.startswith("go "):
            dest = action[3:]
            if dest in self.layout.adjacency[self.room]:
                self.room = dest
                feedback = f"You move to the {dest}."
        elif action.startswith("focus on "):
            obj = action[len("focus on ") :]
            if obj in visible:
                self.focused.add(obj)
                feedback = f"You focus on the {obj}."
                if obj == "thermometer":
                    reward += self._award("focus", REWARD_FOCUS_THERMOMETER)
        elif action.startswith("move ") and " to " in action:
            obj, dest = action[5:].split(" to ", 1)
            if obj in visible and obj in self.places and dest in RECEPTACLES and dest in visible:
                self.places[obj] = ("kitchen", dest)
                if obj == self.substance and dest != "stove":
                    self.heat = 0
                feedback = f"You move the {obj} to the {dest}."
        elif action.startswith(("activate ", "deactivate ")):
            verb, obj = action.split(" ", 1)
            if obj in DEVICES and obj in visible:
                turn_on = verb == "activate"
                if self.active[obj] == turn_on:
                    feedback = f"The {obj} is already {'activated' if turn_on else 'deactivated'}."
                else:
                    self.active[obj] = turn_on
                    feedback = f"The {obj} is now {'activated' if turn_on else 'deactivated'}."
        elif action == "read thermometer":
            if "thermometer" in visible and "thermometer" in self.focused:
                temp = self._temperature()
                feedback = f"The thermometer measures a temperature of {temp} degrees celsius."
                if self.melted() and self.places[self.substance][1] == "stove":
                    feedback += f" The {self.substance} has melted."
                    reward += self._award("read", REWARD_READ_MELTED)
                    finished = True

        reward += self._tick()
        if self.melted() and "melt-note" not in self.awarded and not finished:
            self.awarded.add("melt-note")
            feedback += f" The {self.substance} melts."
        return feedback, reward, finished

    def _tick(self) -> float:
        on_hot_stove = self.places[self.substance][1] == "stove" and self.active["stove"]
        reward = 0.0
        if on_hot_stove and self.substance in self.focused:
            reward += self._award("stove", REWARD_SUBSTANCE_ON_STOVE)
        if on_hot_stove and "stove" in self.awarded:
            self.heat += 1
        return reward


# MiniVault

VAULT_W, VAULT_H = 7, 5
WALL_X = 4
VAULT_TEMPLATES = (
    "k: move north",
    "j: move south",
    "h: move west",
    "l: move east",
    ",: pick up an item",
    "a: apply an item",
    "y: confirm",
    "s: search (wait)",
)
VAULT_ACTIONS = ("k", "j", "h", "l", ",", "a", "y", "s")
MOVES = {"k": (0, -1), "j": (0, 1), "h": (-1, 0), "l": (1, 0)}
REWARD_KEY = 20.0
REWARD_UNLOCK = 30.0
REWARD_STAIRS = 50.0


def _direction(dx: int, dy: int) -> str:
    ns = "north" if dy < 0 else "south" if dy > 0 else ""
    ew = "west" if dx < 0 else "east" if dx > 0 else ""
    return ns + ew or "here"


def _distance(dx: int, dy: int) -> str:
    d = max(abs(dx), abs(dy))
    return "adjacent" if d <= 1 else "very near" if d == 2 else "near" if d <= 4 else "far"


class MiniVault(_Episode):
    """Pick up the key, unlock the door in the wall, reach the staircase."""

    family = "minivault"
    templates = VAULT_TEMPLATES
    noop_action = "s"

    def reset(self, variant: VariantSpec) -> EnvObservation:
        self._check_family(variant)
        rng = random.Random(f"minivault-{variant.seed}")
        left = [(x, y) for x in range(WALL_X) for y in range(VAULT_H)]
        self.pos, self.key = rng.sample(left, 2)
        self.door = (WALL_X, rng.randrange(VAULT_H))
        self.stairs = (rng.randrange(WALL_X + 1, VAULT_W), rng.randrange(VAULT_H))
        self.has_key = False
        self.unlocked = False
        self.pending_apply = False
        self.awarded: set[str] = set()
        self.task_description = (
            "Your task is to reach the staircase down. The staircase is behind a locked door; "
            "find the key, pick it up, and apply it to the door."
        )
        return self._start(f"Hello Agent, welcome to the vault!\n{self.describe()}")

    def valid_actions(self) -> tuple[str, ...]:
        return VAULT_ACTIONS

    def _walkable(self, x: int, y: int) -> bool:
        if not (0 <= x < VAULT_W and 0 <= y < VAULT_H):
            return False
        if x == WALL_X:
            return (x, y) == self.door and self.unlocked
        return True

    def describe(self) -> str:
        px, py = self.pos
        parts = []
        if self.has_key:
            parts.append("You have a key named The Master Key of Thievery.")
        things = [("stairs down", self.stairs), ("horizontal closed door" if not self.unlocked else "open door", self.door)]
        if not self.has_key:
            things.insert(0, ("key", self.key))
        for name, (x, y) in things:
            dx, dy = x - px, y - py
            if (dx, dy) == (0, 0):
                parts.append(f"There is a {name} here.")
            else:
                parts.append(f"You see a {name} {_distance(dx, dy)} {_direction(dx, dy)}.")
        if px == WALL_X - 1:
            parts.append("You see a vertical wall adjacent east.")
        return " ".join(parts)

    def _award(self, key: str, amount: float) -> float:
        if key in self.awarded:
            return 0.0
        self.awarded.add(key)
        return amount

    def _apply(self, action: str) -> tuple[str, float, bool]:
        pending, self.pending_apply = self.pending_apply, False
        if action in MOVES:
            dx, dy = MOVES[action]
            nx, ny = self.pos[0] + dx, self.pos[1] + dy
            if not self._walkable(nx, ny):
                return "You cannot pass.", 0.0, False
            self.pos = (nx, ny)
            if self.pos == self.stairs:
                return "You reach the staircase down.", self._award("stairs", REWARD_STAIRS), True
            if self.pos == self.key and not self.has_key:
                return "You see here a key named The Master Key of Thievery.", 0.0, False
            return "You move.", 0.0, False
        if action == ",":
            if self.pos == self.key and not self.has_key:
                self.has_key = True
                return "g - a key named The Master Key of Thievery.", self._award("key", REWARD_KEY), False
            return "There is nothing here to pick up.", 0.0, False
        if action == "a":
            if not self.has_key:
                return "You don't have anything to use or apply.", 0.0, False
            self.pending_apply = True
            return "What do you want to use or apply? [g] In what direction?", 0.0, False
        if action == "y":
            adjacent_door = self.pos == (WALL_X - 1, self.door[1])
            if pending and adjacent_door and not self.unlocked:
                self.unlocked = True
                return "You succeed in unlocking the door.", self._award("unlock", REWARD_UNLOCK), False
            return "Never mind.", 0.0, False
        if action == "s":
            return "You search but find nothing.", 0.0, False
        return NO_EFFECT, 0.0, False


FAMILIES = {"minilab": MiniLab, "minivault": MiniVault}


def make_env(family: str) -> Environment:
    try:
        return FAMILIES[family]()
    except KeyError:
        raise ConfigError(f"unknown environment family {family!r}; known: {sorted(FAMILIES)}") from None


class SubprocessEnv:
    """Environment adapter over a line-delimited JSON child process."""

    noop_action = "wait"

    def __init__(self, command: Sequence[str]):
        self.command = list(command)
        self.proc: Optional[subprocess.Popen] = None
        self.task_description = ""
        self.done = True

    def _call(self, message: dict) -> dict:
        if self.proc is None or self.proc.poll() is not None:
            self.proc = subprocess.Popen(
                self.command, stdin=subprocess.PIPE, stdout=subprocess.PIPE, text=True, encoding="utf-8"
            )
        assert self.proc.stdin and self.proc.stdout
        self.proc.stdin.write(json.dumps(message) + "\n")
        self.proc.stdin.flush()
        line = self.proc.stdout.readline()
        if not line:
            raise EnvError(f"environment process {self.command!r} exited")
        reply = json.loads(line)
        if "error" in reply:
            raise EnvError(reply["error"])
        return reply

    def reset(self, variant: VariantSpec) -> EnvObservation:
        reply = self._call({"type": "reset", "family": variant.family, "seed": variant.seed, "split": variant.split})
        self.task_description = reply.get("task", "")
        self.done = False
        return EnvObservation.from_json(reply)

    def step(self, action: str) -> EnvObservation:
        if self.done:
            raise EnvError("episode is over; call reset()")
        obs = EnvObservation.from_json(self._call({"type": "step", "action": action}))
        self.done = obs.done
        return obs

    def close(self) -> None:
        if self.proc is not None:
            if self.proc.stdin:
                self.proc.stdin.close()
            self.proc.wait(timeout=5)
            self.proc = None


def serve(infile: IO[str] = sys.stdin, outfile: IO[str] = sys.stdout) -> None:
    """Serve the bundled environments over the subprocess protocol."""
    env: Optional[Environment] = None
    for line in infile:
        if not line.strip():
            continue
        try:
            msg = json.loads(line)
            if msg["type"] == "reset":
                env = make_env(msg["family"])
                obs = env.reset(VariantSpec(msg["family"], int(msg["seed"]), msg.get("split", "train")))
                reply = obs.to_json() | {"task": env.task_description}
            elif msg["type"] == "step":
                if env is None:
                    raise EnvError("step before reset")
                reply = env.step(msg["action"]).to_json()
            else:
                raise EnvError(f"unknown message type {msg['type']!r}")
        except Exception as exc:  # reported to the client, never fatal to the server
            reply = {"error": f"{type(exc).__name__}: {exc}"}
        outfile.write(json.dumps(reply) + "\n")
        outfile.flush()


if __name__ == "__main__":
    serve()
