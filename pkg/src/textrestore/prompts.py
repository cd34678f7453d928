"""Instruction prompt bank: curated seeds, template expansion, sampling, serialization.

Prompt generation is fully deterministic (seeded template composition), so
banks can be rebuilt byte-identically anywhere without network access.
"""
from __future__ import annotations

import json
import re
from dataclasses import dataclass, field

import numpy as np

from .tasks import LANGUAGE_LEVELS, SPLITS, TASK_NAMES


class PromptBankError(Exception):
    pass


class PromptCapacityError(PromptBankError):
    """Requested more prompts than the template tables can produce."""


class EmptyPromptPoolError(PromptBankError):
    """No prompt matches the requested (task, split) filter."""


class PromptParseError(PromptBankError):
    """Malformed prompt-bank document."""


_WS_RUN = re.compile(r"\s+")


def normalize_text(text: str) -> str:
    """Trim and collapse internal whitespace runs; case is preserved."""
    return _WS_RUN.sub(" ", text.strip())


@dataclass(frozen=True)
class PromptRecord:
    text: str
    task: str  # task name; dense ids are assigned per TaskSet
    language_level: str = "basic_precise"
    split: str = "train"

    def __post_init__(self):
        object.__setattr__(self, "text", normalize_text(self.text))
        if not self.text:
            raise PromptBankError("prompt text is empty after trimming")
        if self.task not in TASK_NAMES:
            raise PromptBankError(f"unknown task {self.task!r}")
        if self.language_level not in LANGUAGE_LEVELS:
            raise PromptBankError(f"unknown language level {self.language_level!r}")
        if self.split not in SPLITS:
            raise PromptBankError(f"unknown split {self.split!r}")


@dataclass
class PromptBank:
    """Immutable-by-convention collection of prompt records."""

    records: list[PromptRecord] = field(default_factory=list)
    rng_seed: int = 0

    def __len__(self):
        return len(self.records)

    def filter(self, task: str | None = None, split: str | None = None,
               language_level: str | None = None) -> list[PromptRecord]:
        out = self.records
        if task is not None:
            out = [r for r in out if r.task == task]
        if split is not None:
            out = [r for r in out if r.split == split]
        if language_level is not None:
            out = [r for r in out if r.language_level == language_level]
        return out

    def validate(self):
        seen: set[tuple[str, str, str]] = set()
        for r in self.records:
            key = (r.text, r.task, r.split)
            if key in seen:
                raise PromptBankError(f"duplicate (text, task) in split {r.split!r}: {r.text!r}")
            seen.add(key)
        train_texts = {r.text for r in self.records if r.split == "train"}
        test_texts = {r.text for r in self.records if r.split == "test"}
        overlap = train_texts & test_texts
        if overlap:
            raise PromptBankError(f"train/test splits share texts, e.g. {sorted(overlap)[:3]}")


# Curated seed instructions, one tuple per degradation. The "general" group is
# deliberately ambiguous and applies to any task.
_SEED_PROMPTS: dict[str, list[str]] = {
    "denoising": [
        "Can you clean the dots from my image?",
        "Fix the grainy parts of this photo",
        "Remove the noise from my picture",
    ],
    "deblurring": [
        "Can you reduce the movement in the image?",
        "My picture's not sharp, fix it",
        "Deblur my picture, it's too fuzzy",
    ],
    "dehazing": [
        "Can you make this picture clearer?",
        "Help, my picture is all cloudy",
        "Remove the fog from my photo",
    ],
    "deraining": [
        "I want my photo to be clear, not rainy",
        "Clear the rain from my picture",
        "Remove the raindrops from my photo",
    ],
    "super_resolution": [
        "Make my photo bigger and better",
        "Add details to this image",
        "Increase the resolution of this photo",
    ],
    "low_light": [
        "The photo is too dark, improve exposure",
        "Increase the illumination in this shot",
        "My shot has very low dynamic range",
    ],
    "enhancement": [
        "Make it pop!",
        "Adjust the color balance for a natural look",
        "Apply a cinematic color grade to the photo",
    ],
}

_GENERAL_PROMPTS = [
    "Fix my image please",
    "make the image look better",
]

# Prompts collected from amateur photographers; test-split only.
_REAL_USER_PROMPTS: dict[str, list[str]] = {
    "denoising": ["Remove the noise in this photo", "Get rid of the grain in my photo"],
    "deblurring": ["Clean up my image, it's too fuzzy", "Reduce the motion in this shot"],
    "dehazing": ["remove and haze and mist from this photo please", "Reduce the fog in this landmark"],
    "deraining": ["Can you remove the raindrops?", "Please get rid of the raindrops"],
    "super_resolution": ["restore this photo, add details", "Increase the resolution, it looks pixelated"],
    "low_light": ["my image is too dark, fix it", "Increase the brightness of my photo please, is it totoro?"],
    "enhancement": [
        "my colors are too off, make it pop so I can use these photos in instagram",
        "Retouch it as a photographer would",
    ],
}


def load_seed_prompts() -> PromptBank:
    """Curated seed bank: precise per-task prompts (train) plus ambiguous and
    real-user prompts (test; the ambiguous ones are replicated to every task)."""
    records = []
    for task, texts in _SEED_PROMPTS.items():
        for t in texts:
            records.append(PromptRecord(t, task, "basic_precise", "train"))
    for task in TASK_NAMES:
        for t in _GENERAL_PROMPTS:
            records.append(PromptRecord(t, task, "basic_ambiguous", "test"))
    for task, texts in _REAL_USER_PROMPTS.items():
        for t in texts:
            records.append(PromptRecord(t, task, "real_user", "test"))
    bank = PromptBank(records=records)
    bank.validate()
    return bank


# ---------------------------------------------------------------------------
# Template expansion
# ---------------------------------------------------------------------------
# Each task owns distinct artifact vocabulary so generated texts never collide
# across tasks (validated at build time).

_PREFIXES = [
    "", "Please ", "Can you ", "Could you ", "Would you ",
    "I need you to ", "Hey, please ", "If possible, ",
]

_SUFFIXES = ["", " please", ", thanks", ", thank you", " for me", " right away"]

_IMAGE_WORDS = ["photo", "picture", "image", "shot", "photograph", "snapshot"]

# verbs x artifacts are task-specific; {img} is filled with an image word.
_TASK_PHRASES: dict[str, dict[str, list[str]]] = {
    "denoising": {
        "verbs": ["remove", "get rid of", "clean up", "reduce", "eliminate", "filter out", "clear away"],
        "artifacts": [
            "the noise in this {img}", "the grain in my {img}", "the graininess of the {img}",
            "the speckles on this {img}", "the tiny dots in my {img}", "the static from this {img}",
            "the grainy texture in the {img}",
        ],
        "complaints": [
            "My {img} is too noisy, fix it", "This {img} looks grainy, clean it",
            "There is noise all over my {img}, remove it", "My {img} is covered in specks, sort it out",
        ],
    },
    "deblurring": {
        "verbs": ["remove", "fix", "reduce", "sharpen away", "correct", "undo", "clean up"],
        "artifacts": [
            "the blur in this {img}", "the motion blur in my {img}", "the blurriness of the {img}",
            "the camera shake in this {img}", "the fuzziness in my {img}", "the smearing in the {img}",
            "the out-of-focus look of this {img}",
        ],
        "complaints": [
            "My {img} is too blurry, fix it", "This {img} is not sharp, make it crisp",
            "My {img} came out shaky, repair it", "Everything in my {img} is fuzzy, sharpen it",
        ],
    },
    "dehazing": {
        "verbs": ["remove", "clear", "cut through", "lift", "get rid of", "reduce", "take away"],
        "artifacts": [
            "the haze in this {img}", "the fog in my {img}", "the mist covering the {img}",
            "the smog in this {img}", "the cloudy veil over my {img}", "the murky air in the {img}",
            "the foggy layer on this {img}",
        ],
        "complaints": [
            "My {img} is too hazy, fix it", "This {img} looks foggy, clear it up",
            "A white mist covers my {img}, remove it", "My {img} is washed out by haze, restore it",
        ],
    },
    "deraining": {
        "verbs": ["remove", "clear", "wipe away", "get rid of", "erase", "clean off", "take out"],
        "artifacts": [
            "the rain in this {img}", "the raindrops on my {img}", "the rain streaks across the {img}",
            "the rainfall in this {img}", "the wet streaks on my {img}", "the drizzle in the {img}",
            "the water streaks over this {img}",
        ],
        "complaints": [
            "My {img} was taken in the rain, fix it", "This {img} is full of rain streaks, clean it",
            "Raindrops ruined my {img}, repair it", "My {img} looks rainy, make it clear",
        ],
    },
    "super_resolution": {
        "verbs": ["increase", "boost", "improve", "raise", "enhance", "upgrade", "sharpen up"],
        "artifacts": [
            "the resolution of this {img}", "the level of detail in my {img}", "the definition of the {img}",
            "the fine details in this {img}", "the sharpness of my low-res {img}", "the pixel detail of the {img}",
            "the crispness of this upscaled {img}",
        ],
        "complaints": [
            "My {img} is too low resolution, upscale it", "This {img} looks pixelated, add detail",
            "My {img} lost its fine details, bring them back", "The {img} looks soft after enlarging, refine it",
        ],
    },
    "low_light": {
        "verbs": ["brighten", "lighten", "fix", "improve", "boost", "recover", "raise"],
        "artifacts": [
            "the exposure of this dark {img}", "the brightness of my {img}", "the shadows in the {img}",
            "the underexposed parts of this {img}", "the dim lighting in my {img}",
            "the low light in the {img}", "the dark corners of this {img}",
        ],
        "complaints": [
            "My {img} is too dark, brighten it", "This {img} was shot at night, lighten it",
            "I can barely see anything in my {img}, fix the exposure",
            "The lighting in my {img} is terrible, improve it",
        ],
    },
    "enhancement": {
        "verbs": ["enhance", "retouch", "improve", "polish", "beautify", "touch up", "grade"],
        "artifacts": [
            "the colors of this {img}", "the tones in my {img}", "the contrast of the {img}",
            "the overall look of this {img}", "the color balance of my {img}",
            "the vibrance of the {img}", "the style of this {img}",
        ],
        "complaints": [
            "My {img} looks flat, make it pop", "This {img} needs a professional touch, retouch it",
            "The colors in my {img} are dull, liven them up", "Give my {img} a cinematic look",
        ],
    },
}

_QUESTION_PREFIXES = ("Can you ", "Could you ", "Would you ")


def _compose(prefix: str, body: str, suffix: str) -> str:
    if prefix and prefix[0].isupper():
        body = body[0].lower() + body[1:]
    text = prefix + body + suffix
    if prefix in _QUESTION_PREFIXES:
        text += "?"
    return normalize_text(text)


def _task_templates(task: str) -> list[str]:
    """All distinct prompts the tables can produce for one task, fixed order."""
    phrases = _TASK_PHRASES[task]
    out: list[str] = []
    seen: set[str] = set()
    for verb in phrases["verbs"]:
        for artifact in phrases["artifacts"]:
            for img in _IMAGE_WORDS:
                body = f"{verb[0].upper()}{verb[1:]} {artifact.format(img=img)}"
                for prefix in _PREFIXES:
                    for suffix in _SUFFIXES:
                        text = _compose(prefix, body, suffix)
                        if text not in seen:
                            seen.add(text)
                            out.append(text)
    for complaint in phrases["complaints"]:
        for img in _IMAGE_WORDS:
            text = normalize_text(complaint.format(img=img))
            if text not in seen:
                seen.add(text)
                out.append(text)
    return out


def template_capacity() -> dict[str, int]:
    return {task: len(_task_templates(task)) for task in TASK_NAMES}


def expand_prompts(seed: PromptBank, target_count: int, rng_seed: int,
                   test_fraction: float = 0.1) -> PromptBank:
    """Expand the seed bank to at least ``target_count`` records by sampling the
    per-task template tables (uniformly across tasks, without replacement)."""
    if target_count < len(seed):
        raise PromptBankError(
            f"target_count {target_count} is below the seed bank size {len(seed)}")
    n_tasks = len(TASK_NAMES)
    per_task = -(-max(target_count - len(seed), 0) // n_tasks)  # ceil

    records = list(seed.records)
    existing = {(r.text, r.task) for r in records}
    for task_idx, task in enumerate(TASK_NAMES):
        pool = _task_templates(task)
        pool = [t for t in pool if (t, task) not in existing]
        if per_task > len(pool):
            raise PromptCapacityError(
                f"task {task!r} can produce {len(pool)} distinct prompts, "
                f"but {per_task} were requested; extend the template tables")
        rng = np.random.default_rng([rng_seed, task_idx])
        order = rng.permutation(len(pool))[:per_task]
        for j, pool_idx in enumerate(order):
            split = "test" if (j % 10) == 9 and test_fraction > 0 else "train"
            records.append(PromptRecord(pool[int(pool_idx)], task, "basic_precise", split))

    bank = PromptBank(records=records, rng_seed=rng_seed)
    bank.validate()
    return bank


def sample_prompt(bank: PromptBank, task: str, split: str,
                  rng: np.random.Generator,
                  language_level: str | None = None) -> PromptRecord:
    """Uniform draw over the records matching (task, split[, language_level])."""
    pool = bank.filter(task=task, split=split, language_level=language_level)
    if not pool:
        level = f", level {language_level!r}" if language_level else ""
        raise EmptyPromptPoolError(
            f"no prompts for task {task!r} in split {split!r}{level}")
    return pool[int(rng.integers(len(pool)))]


# ---------------------------------------------------------------------------
# Serialization: line-delimited JSON, fixed field order, UTF-8.
# ---------------------------------------------------------------------------

def serialize_bank(bank: PromptBank) -> bytes:
    lines = [json.dumps({"rng_seed": bank.rng_seed}, ensure_ascii=False)]
    for r in bank.records:
        lines.append(json.dumps(
            {"text": r.text, "task": r.task,
             "language_level": r.language_level, "split": r.split},
            ensure_ascii=False))
    return ("\n".join(lines) + "\n").encode("utf-8")


def parse_bank(data: bytes | str) -> PromptBank:
    if isinstance(data, bytes):
        data = data.decode("utf-8")
    lines = [ln for ln in data.split("\n") if ln.strip()]
    if not lines:
        raise PromptParseError("empty prompt bank document")
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as e:
        raise PromptParseError(f"line 1: invalid JSON ({e})") from e
    if not isinstance(header, dict) or "rng_seed" not in header:
        raise PromptParseError("line 1: expected header object with 'rng_seed'")
    records = []
    for i, line in enumerate(lines[1:], start=2):
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as e:
            raise PromptParseError(f"line {i}: invalid JSON ({e})") from e
        missing = {"text", "task", "language_level", "split"} - set(obj)
        if missing:
            raise PromptParseError(f"line {i}: missing fields {sorted(missing)}")
        try:
            records.append(PromptRecord(obj["text"], obj["task"],
                                        obj["language_level"], obj["split"]))
        except PromptBankError as e:
            raise PromptParseError(f"line {i}: {e}") from e
    bank = PromptBank(records=records, rng_seed=int(header["rng_seed"]))
    bank.validate()
    return bank


def save_bank(bank: PromptBank, path) -> None:
    with open(path, "wb") as f:
        f.write(serialize_bank(bank))


def load_bank(path) -> PromptBank:
    with open(path, "rb") as f:
        return parse_bank(f.read())
