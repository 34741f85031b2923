"""Ready-made robots, requirements and manifests for the scripted backends."""

from __future__ import annotations

from importlib import resources

from affordlab.domain import Annotation, BBox, ImageEntry, ImageManifest, ObjectClass, Requirements, RobotSpec
from affordlab.ranking import synthetic_distractor_manifest

SMALL_ROBOT = RobotSpec("wheeled", mass_kg=5, height_cm=25)
LARGE_ROBOT = RobotSpec("quadruped", mass_kg=50, height_cm=50)

CONTAIN_LIQUIDS = Requirements("contain", "get liquids from A to B", ("safe", "reliable"))
CONTAIN_GROCERIES = Requirements("contain", "get groceries from A to B", ("safe", "reliable"))
STAND_HEIGHT = Requirements("stand on", "increase robot's height", ("safe", "reliable"))
STAND_FLOAT = Requirements("stand on", "float on water", ("safe", "reliable"))
PLACE_SMALL = Requirements("place a small object on", "keep the object off the floor", ("safe", "reliable"))

EFFECT_COLUMNS = (CONTAIN_LIQUIDS, CONTAIN_GROCERIES, STAND_HEIGHT, STAND_FLOAT)

_HOUSEHOLD = (
    ("bowl", "plastic"), ("box", "plastic"), ("bucket", "plastic"), ("blender", "glass"),
    ("can", "metal"), ("carton", "paper"), ("cup", "plastic"), ("jar", "glass"),
    ("kettle", "metal"), ("mug", "glass"), ("tray", "wood"), ("vase", "glass"),
    ("bag", "paper"), ("belt", "plastic"), ("bench", "metal"), ("bottle", "plastic"),
    ("ladder", "metal"), ("stool", "wood"), ("book", "paper"), ("basket", "plastic"),
)
_FURNITURE = ("basket", "bench", "box", "book", "ladder", "stool")
_MATERIALS = ("plastic", "metal", "wood", "glass", "paper")


def household_manifest() -> ImageManifest:
    """One image per household object, each with a single annotated instance."""
    entries = []
    for i, (obj, material) in enumerate(_HOUSEHOLD):
        ann = Annotation(ObjectClass(obj), (("material", material),), BBox(100, 80, 400, 420))
        entries.append(ImageEntry(f"house{i:02d}", f"images/house{i:02d}.jpg", 640, 480, (ann,)))
    return ImageManifest(tuple(entries))


def furniture_manifest() -> ImageManifest:
    """One image per climbable object holding it in all five materials side by side."""
    entries = []
    for i, obj in enumerate(_FURNITURE):
        anns = tuple(
            Annotation(ObjectClass(obj), (("material", m),), BBox(20 + 195 * k, 100, 180 + 195 * k, 380))
            for k, m in enumerate(_MATERIALS)
        )
        entries.append(ImageEntry(f"furn{i:02d}", f"images/furn{i:02d}.jpg", 1000, 480, anns))
    return ImageManifest(tuple(entries))


def distractor_manifest() -> ImageManifest:
    return synthetic_distractor_manifest()


BUILDERS = {
    "household.json": household_manifest,
    "furniture.json": furniture_manifest,
    "distractors.json": distractor_manifest,
}


def fixture_path(name: str):
    """Path of a shipped fixture file (manifest or knowledge base)."""
    return resources.files("affordlab.fixtures").joinpath(name)


def write_fixtures(directory) -> None:
    from pathlib import Path

    for name, build in BUILDERS.items():
        build().save(Path(directory) / name)
