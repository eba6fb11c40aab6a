import pytest

from hstformer.skeleton import (
    BodyPartPartition, JOINT_INDEX, NUM_JOINTS, Skeleton, SkeletonError,
    default_skeleton, mirror_pairs, mirror_permutation, validate_partition,
)


def test_default_partition_lookup():
    _, part = default_skeleton()
    assert part.part_of(JOINT_INDEX["RElbow"]) == "RightHand"
    assert part.part_of(JOINT_INDEX["Spine"]) == "Torso"


def test_group_sizes():
    _, part = default_skeleton()
    assert sorted(part.sizes) == [2, 3, 3, 3, 3, 3]
    assert sum(part.sizes) == 17


def test_partition_is_disjoint_cover():
    _, part = default_skeleton()
    validate_partition(part)  # must not raise
    joints = [j for g in part.groups for j in g]
    assert sorted(joints) == list(range(NUM_JOINTS))


def test_overlapping_partition_rejected():
    bad = BodyPartPartition(("A", "B"), ((0, 1, 2), tuple(range(2, NUM_JOINTS))))
    with pytest.raises(SkeletonError):
        validate_partition(bad)


def test_incomplete_partition_rejected():
    bad = BodyPartPartition(("A",), ((0, 1, 2),))
    with pytest.raises(SkeletonError):
        validate_partition(bad)


def test_non_17_joint_skeleton_rejected():
    with pytest.raises(SkeletonError):
        Skeleton(("Hip", "Head"))


def test_mirror_pairs_content():
    pairs = {frozenset(p) for p in mirror_pairs()}
    expect = {
        frozenset((JOINT_INDEX["LHip"], JOINT_INDEX["RHip"])),
        frozenset((JOINT_INDEX["LKnee"], JOINT_INDEX["RKnee"])),
        frozenset((JOINT_INDEX["LFoot"], JOINT_INDEX["RFoot"])),
        frozenset((JOINT_INDEX["LShoulder"], JOINT_INDEX["RShoulder"])),
        frozenset((JOINT_INDEX["LElbow"], JOINT_INDEX["RElbow"])),
        frozenset((JOINT_INDEX["LWrist"], JOINT_INDEX["RWrist"])),
    }
    assert pairs == expect


def test_mirror_is_involution():
    perm = mirror_permutation()
    assert [perm[perm[i]] for i in range(NUM_JOINTS)] == list(range(NUM_JOINTS))


def test_each_joint_in_at_most_one_pair():
    joints = [j for p in mirror_pairs() for j in p]
    assert len(joints) == len(set(joints))


def test_fixed_point_count():
    perm = mirror_permutation()
    fixed = [i for i in range(NUM_JOINTS) if perm[i] == i]
    assert len(fixed) == 5
    names = {"Hip", "Spine", "Thorax", "Nose", "Head"}
    assert {i for i in fixed} == {JOINT_INDEX[n] for n in names}
