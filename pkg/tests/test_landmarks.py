"""Landmark record schema: parsing, validation, clamping, serialization."""

import io
import json
import math

import pytest
from hypothesis import given
from hypothesis import strategies as st

from unpose import (
    POSE2D17,
    POSE3D33,
    TOPOLOGIES,
    Keypoint,
    LandmarkRecord,
    normalize,
    parse_landmark_records,
    serialize_landmark_record,
    serialize_landmark_records,
    validate_topology,
)


def make_keypoints(topology_name: str, x: float = 10.0, y: float = 20.0):
    topology = TOPOLOGIES[topology_name]
    z = 0.1 if topology.has_z else None
    return tuple(Keypoint(x=x, y=y, z=z, visibility=1.0) for _ in range(topology.keypoint_count))


def make_record(topology_name: str = POSE3D33, **overrides) -> LandmarkRecord:
    base = dict(
        image_id="img-1",
        product_id="prod-1",
        topology=topology_name,
        width=640,
        height=480,
        detected=True,
        keypoints=make_keypoints(topology_name),
    )
    base.update(overrides)
    return LandmarkRecord(**base)


def record_json(topology_name: str = POSE3D33, **overrides) -> str:
    return serialize_landmark_record(make_record(topology_name, **overrides))


class TestTopologies:
    def test_keypoint_counts(self):
        assert TOPOLOGIES[POSE2D17].keypoint_count == 17
        assert TOPOLOGIES[POSE3D33].keypoint_count == 33

    def test_z_axis_flags(self):
        assert not TOPOLOGIES[POSE2D17].has_z
        assert TOPOLOGIES[POSE3D33].has_z

    def test_symmetric_pairs_reference_valid_left_right_indices(self):
        for topology in TOPOLOGIES.values():
            for left, right in topology.symmetric_pairs:
                left_name = topology.keypoint_names[left]
                right_name = topology.keypoint_names[right]
                assert "right" not in left_name.replace("right_", "", 1) or left_name != right_name
                assert left_name != right_name

    def test_both_topologies_share_core_joint_names(self):
        core = {"nose", "left_shoulder", "right_shoulder", "left_hip", "right_hip",
                "left_ankle", "right_ankle"}
        for topology in TOPOLOGIES.values():
            assert core <= set(topology.keypoint_names)

    def test_index_lookup(self):
        assert TOPOLOGIES[POSE2D17].index("nose") == 0
        assert TOPOLOGIES[POSE3D33].index("left_shoulder") == 11


class TestParsing:
    def test_valid_line_parses(self):
        result = parse_landmark_records(record_json())
        assert result.errors == []
        assert len(result.records) == 1
        record = result.records[0]
        assert record.image_id == "img-1"
        assert record.topology == POSE3D33
        assert len(record.keypoints) == 33

    def test_blank_lines_skipped(self):
        payload = "\n\n" + record_json() + "\n\n   \n" + record_json(image_id="img-2") + "\n"
        result = parse_landmark_records(payload)
        assert result.errors == []
        assert [r.image_id for r in result.records] == ["img-1", "img-2"]

    def test_accepts_bytes_and_file_objects(self):
        payload = record_json()
        for stream in (payload, payload.encode("utf-8"), io.StringIO(payload)):
            result = parse_landmark_records(stream)
            assert len(result.records) == 1

    def test_malformed_json_reports_one_based_line(self):
        payload = record_json() + "\n{not json\n" + record_json(image_id="img-3")
        result = parse_landmark_records(payload)
        assert len(result.records) == 2
        assert len(result.errors) == 1
        assert result.errors[0].line == 2

    def test_bad_line_is_skipped_not_fatal(self):
        payload = '{"image_id": 5}\n' + record_json()
        result = parse_landmark_records(payload)
        assert len(result.records) == 1
        assert len(result.errors) == 1

    def test_nan_and_infinity_constants_rejected(self):
        line = record_json().replace('"x":10.0', '"x":NaN', 1)
        result = parse_landmark_records(line)
        assert result.records == []
        assert "non-finite constant" in result.errors[0].message

    def test_unknown_record_field_rejected(self):
        obj = json.loads(record_json())
        obj["extra"] = 1
        result = parse_landmark_records(json.dumps(obj))
        assert result.records == []
        assert "unknown field" in result.errors[0].message

    def test_missing_field_rejected(self):
        obj = json.loads(record_json())
        del obj["width"]
        result = parse_landmark_records(json.dumps(obj))
        assert "missing field" in result.errors[0].message

    def test_keypoint_count_mismatch_names_both_counts(self):
        obj = json.loads(record_json())
        obj["keypoints"] = obj["keypoints"][:-1]
        result = parse_landmark_records(json.dumps(obj))
        assert result.records == []
        message = result.errors[0].message
        assert "33" in message and "32" in message

    def test_undetected_with_keypoints_rejected(self):
        obj = json.loads(record_json())
        obj["detected"] = False
        result = parse_landmark_records(json.dumps(obj))
        assert "no keypoints" in result.errors[0].message

    def test_undetected_with_empty_keypoints_ok(self):
        line = record_json(detected=False, keypoints=())
        result = parse_landmark_records(line)
        assert result.errors == []
        assert result.records[0].detected is False
        assert result.records[0].keypoints == ()

    def test_z_required_for_3d(self):
        obj = json.loads(record_json())
        del obj["keypoints"][0]["z"]
        result = parse_landmark_records(json.dumps(obj))
        assert "z required" in result.errors[0].message

    def test_z_forbidden_for_2d(self):
        obj = json.loads(record_json(POSE2D17))
        obj["keypoints"][0]["z"] = 0.5
        result = parse_landmark_records(json.dumps(obj))
        assert "not allowed" in result.errors[0].message

    def test_visibility_out_of_range_rejected(self):
        obj = json.loads(record_json())
        obj["keypoints"][3]["visibility"] = 1.5
        result = parse_landmark_records(json.dumps(obj))
        assert "visibility" in result.errors[0].message

    def test_visibility_defaults_to_one(self):
        obj = json.loads(record_json())
        del obj["keypoints"][0]["visibility"]
        result = parse_landmark_records(json.dumps(obj))
        assert result.errors == []
        assert result.records[0].keypoints[0].visibility == 1.0

    def test_boolean_dimensions_rejected(self):
        obj = json.loads(record_json())
        obj["width"] = True
        result = parse_landmark_records(json.dumps(obj))
        assert "positive integer" in result.errors[0].message

    def test_non_positive_dimensions_rejected(self):
        for bad in (0, -3, 12.5):
            obj = json.loads(record_json())
            obj["height"] = bad
            result = parse_landmark_records(json.dumps(obj))
            assert result.records == [], f"height={bad} accepted"

    def test_detected_must_be_boolean(self):
        obj = json.loads(record_json())
        obj["detected"] = 1
        result = parse_landmark_records(json.dumps(obj))
        assert "boolean" in result.errors[0].message

    def test_unknown_topology_rejected(self):
        obj = json.loads(record_json())
        obj["topology"] = "POSE99"
        result = parse_landmark_records(json.dumps(obj))
        assert "unknown topology" in result.errors[0].message

    def test_string_ids_required(self):
        obj = json.loads(record_json())
        obj["image_id"] = 42
        result = parse_landmark_records(json.dumps(obj))
        assert "must be strings" in result.errors[0].message


class TestClamping:
    def test_out_of_frame_point_clamped_with_warning(self):
        keypoints = list(make_keypoints(POSE3D33))
        keypoints[0] = Keypoint(x=-5.0, y=900.0, z=0.1, visibility=0.0)
        record = make_record(keypoints=tuple(keypoints))
        clamped, diags = validate_topology(record)
        assert clamped is not None
        warnings = [d for d in diags if d.severity == "warning"]
        assert len(warnings) == 1
        assert "clamped" in warnings[0].message
        assert clamped.keypoints[0].x == 0.0
        assert clamped.keypoints[0].y == 480.0

    def test_in_frame_record_untouched(self):
        record = make_record()
        clamped, diags = validate_topology(record)
        assert diags == []
        assert clamped is record

    def test_clamp_counts_each_offender_once(self):
        keypoints = list(make_keypoints(POSE3D33))
        keypoints[0] = Keypoint(x=-1.0, y=-1.0, z=0.0)
        keypoints[1] = Keypoint(x=10_000.0, y=5.0, z=0.0)
        record = make_record(keypoints=tuple(keypoints))
        _, diags = validate_topology(record)
        assert "2 keypoint(s)" in diags[0].message


class TestSerialization:
    def test_round_trip_identity(self):
        record = make_record()
        line = serialize_landmark_record(record)
        parsed = parse_landmark_records(line)
        assert parsed.errors == []
        assert parsed.records[0] == record

    def test_canonical_field_order(self):
        line = serialize_landmark_record(make_record())
        keys = list(json.loads(line).keys())
        assert keys == ["image_id", "product_id", "topology", "width", "height",
                        "detected", "keypoints"]

    def test_2d_records_serialize_without_z(self):
        line = serialize_landmark_record(make_record(POSE2D17))
        assert '"z"' not in line

    def test_many_records_one_line_each(self):
        records = [make_record(image_id=f"img-{i}") for i in range(3)]
        text = serialize_landmark_records(records)
        assert text.count("\n") == 3
        assert parse_landmark_records(text).records == records


class TestNormalize:
    def test_coordinates_divided_by_dimensions(self):
        record = make_record(width=100, height=200)
        normalized = normalize(record)
        assert normalized.coords[0].x == pytest.approx(10.0 / 100)
        assert normalized.coords[0].y == pytest.approx(20.0 / 200)

    def test_z_passes_through_unscaled(self):
        record = make_record(width=100, height=200)
        assert normalize(record).coords[0].z == 0.1

    def test_identity_fields_preserved(self):
        normalized = normalize(make_record())
        assert normalized.image_id == "img-1"
        assert normalized.product_id == "prod-1"
        assert normalized.detected is True

    def test_undetected_record_normalizes_to_empty(self):
        record = make_record(detected=False, keypoints=())
        assert normalize(record).coords == ()


@st.composite
def landmark_records(draw):
    topology_name = draw(st.sampled_from([POSE2D17, POSE3D33]))
    topology = TOPOLOGIES[topology_name]
    width = draw(st.integers(min_value=1, max_value=4096))
    height = draw(st.integers(min_value=1, max_value=4096))
    detected = draw(st.booleans())
    keypoints = ()
    if detected:
        coord = st.floats(min_value=0.0, max_value=1.0, allow_nan=False)
        z_value = st.floats(min_value=-2.0, max_value=2.0, allow_nan=False)
        keypoints = tuple(
            Keypoint(
                x=draw(coord) * width,
                y=draw(coord) * height,
                z=draw(z_value) if topology.has_z else None,
                visibility=draw(st.floats(min_value=0.0, max_value=1.0, allow_nan=False)),
            )
            for _ in range(topology.keypoint_count)
        )
    return LandmarkRecord(
        image_id=draw(st.text(min_size=1, max_size=10)),
        product_id=draw(st.text(min_size=1, max_size=10)),
        topology=topology_name,
        width=width,
        height=height,
        detected=detected,
        keypoints=keypoints,
    )


@given(landmark_records())
def test_property_serialize_parse_round_trip(record):
    parsed = parse_landmark_records(serialize_landmark_record(record))
    assert parsed.errors == []
    assert parsed.records[0] == record


@given(landmark_records())
def test_property_normalized_coordinates_in_unit_square(record):
    normalized = normalize(record)
    for kp in normalized.coords:
        assert 0.0 <= kp.x <= 1.0
        assert 0.0 <= kp.y <= 1.0
        assert math.isfinite(kp.x) and math.isfinite(kp.y)
