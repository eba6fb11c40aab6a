"""The 17-joint human skeleton, its 6-way body-part grouping, and mirror pairs.

All of these are fixed taxonomy: the joint order and the group-internal joint
order are part of the on-disk serialization contract and must not change.
"""

from __future__ import annotations

from dataclasses import dataclass

JOINT_NAMES = (
    "Hip", "RHip", "RKnee", "RFoot", "LHip", "LKnee", "LFoot",
    "Spine", "Thorax", "Nose", "Head",
    "LShoulder", "LElbow", "LWrist", "RShoulder", "RElbow", "RWrist",
)

JOINT_INDEX = {name: i for i, name in enumerate(JOINT_NAMES)}

NUM_JOINTS = 17

# Group order and group-internal joint order are fixed: the body-part temporal
# encoder's token layout depends on them.
BODY_PART_GROUPS = (
    ("Head", ("Nose", "Head")),
    ("Torso", ("Hip", "Spine", "Thorax")),
    ("LeftHand", ("LShoulder", "LElbow", "LWrist")),
    ("RightHand", ("RShoulder", "RElbow", "RWrist")),
    ("LeftLeg", ("LHip", "LKnee", "LFoot")),
    ("RightLeg", ("RHip", "RKnee", "RFoot")),
)


class SkeletonError(ValueError):
    """Raised for malformed skeletons or partitions."""


@dataclass(frozen=True)
class Skeleton:
    joint_names: tuple[str, ...]

    def __post_init__(self):
        if len(self.joint_names) != NUM_JOINTS:
            raise SkeletonError(
                f"expected {NUM_JOINTS} joints, got {len(self.joint_names)}")
        if len(set(self.joint_names)) != len(self.joint_names):
            raise SkeletonError("joint names must be unique")

    def index(self, name: str) -> int:
        return self.joint_names.index(name)


@dataclass(frozen=True)
class BodyPartPartition:
    """Named, ordered joint-index groups covering all 17 joints exactly once."""

    names: tuple[str, ...]
    groups: tuple[tuple[int, ...], ...]

    def part_of(self, joint: int) -> str:
        for name, group in zip(self.names, self.groups):
            if joint in group:
                return name
        raise SkeletonError(f"joint index {joint} not in any group")

    @property
    def sizes(self) -> tuple[int, ...]:
        return tuple(len(g) for g in self.groups)


def default_skeleton() -> tuple[Skeleton, BodyPartPartition]:
    """The canonical 17-joint skeleton and its six-part grouping."""
    skel = Skeleton(JOINT_NAMES)
    names = tuple(name for name, _ in BODY_PART_GROUPS)
    groups = tuple(tuple(JOINT_INDEX[j] for j in joints)
                   for _, joints in BODY_PART_GROUPS)
    part = BodyPartPartition(names, groups)
    validate_partition(part)
    return skel, part


def validate_partition(partition: BodyPartPartition) -> None:
    """Groups must be pairwise disjoint and cover all 17 joints."""
    seen: list[int] = []
    for g in partition.groups:
        seen.extend(g)
    if len(seen) != len(set(seen)):
        raise SkeletonError("body-part groups overlap")
    if set(seen) != set(range(NUM_JOINTS)):
        raise SkeletonError(f"body-part groups cover {sorted(set(seen))}, "
                            f"expected all of 0..{NUM_JOINTS - 1}")


def mirror_pairs() -> tuple[tuple[int, int], ...]:
    """Left/right joint index pairs swapped by horizontal flipping.

    Inferred from the L/R name prefixes; centerline joints are fixed points.
    """
    pairs = []
    for name, idx in JOINT_INDEX.items():
        if name.startswith("L") and name != "Hip":
            other = "R" + name[1:]
            if other in JOINT_INDEX:
                pairs.append((idx, JOINT_INDEX[other]))
    return tuple(sorted(pairs))


def mirror_permutation() -> list[int]:
    """Joint permutation realizing the left/right swap (an involution)."""
    perm = list(range(NUM_JOINTS))
    for a, b in mirror_pairs():
        perm[a], perm[b] = perm[b], perm[a]
    return perm
