"""End-to-end flows: reference selection, training stages, coverage audits,
evaluation conventions, and the metadata/label parsers."""

import json

import numpy as np
import pytest

from unpose import (
    POSE2D17,
    POSE3D33,
    StageError,
    TopologyMismatchError,
    TrainConfig,
    UnposeError,
    evaluate,
    infer_flow,
    parse_label_records,
    parse_product_records,
    select_reference,
    serialize_eval_report,
    serialize_missing_report,
    train_flow,
)
from unpose.synth import generate_class_sample

from conftest import SMALL_CLASSES, make_product


def subject_records(classes, product_id="SUBJ", per_class=1, topology=POSE3D33):
    """Noiseless samples of the given classes, all owned by one product."""
    records = []
    for class_id in classes:
        for i in range(per_class):
            records.append(
                generate_class_sample(
                    class_id,
                    0.0,
                    seed=0,
                    index=i,
                    topology=topology,
                    image_id=f"subj-c{class_id}-{i}",
                    product_id=product_id,
                )
            )
    return records


def subject_product(product_id="SUBJ", n_images=0):
    return make_product(
        product_id=product_id,
        image_ids=tuple(f"subj-{i}" for i in range(n_images)),
    )


class TestSelectReference:
    def products(self):
        return [
            make_product("A", avg_rating=5.0, num_reviews=999, image_ids=tuple("abcdefghij")),
            make_product("B", avg_rating=3.0, num_reviews=9, image_ids=tuple("abcdefghijkl")),
            make_product("C", avg_rating=5.0, num_reviews=999, image_ids=tuple("abc")),
            make_product("D", avg_rating=4.0, num_reviews=99, image_ids=tuple("abcdefghij")),
        ]

    def test_filters_by_image_count_and_sorts_by_popularity(self):
        # C is the most popular but has only 3 images; A > D > B by target
        assert select_reference(self.products(), min_images=10) == ["A", "D", "B"]

    def test_top_k_truncates_after_sorting(self):
        assert select_reference(self.products(), min_images=10, top_k=2) == ["A", "D"]

    def test_equal_popularity_breaks_ties_by_product_id(self):
        products = [
            make_product("Z", avg_rating=4.0, num_reviews=999, image_ids=tuple("abcdefghij")),
            make_product("M", avg_rating=4.0, num_reviews=999, image_ids=tuple("abcdefghij")),
        ]
        assert select_reference(products, min_images=10) == ["M", "Z"]

    def test_no_products_at_all(self):
        with pytest.raises(UnposeError, match="no products given"):
            select_reference([])

    def test_no_product_clears_the_image_bar(self):
        with pytest.raises(UnposeError, match="no products have >= 10 images"):
            select_reference(self.products()[2:3], min_images=10)


class TestTrainFlowStages:
    def test_malformed_landmark_text_fails_in_parse_stage(self, small_corpus):
        _, _, products = small_corpus
        with pytest.raises(StageError, match="malformed landmark line") as exc_info:
            train_flow("this is not json\n", products, TrainConfig(k=2))
        assert exc_info.value.stage == "parse"

    def test_empty_corpus_fails_in_parse_stage(self, small_corpus):
        _, _, products = small_corpus
        with pytest.raises(StageError, match="no landmark records") as exc_info:
            train_flow([], products, TrainConfig(k=2))
        assert exc_info.value.stage == "parse"

    def test_unknown_product_reference_fails_in_validate_stage(self, small_corpus):
        records, _, products = small_corpus
        orphan = generate_class_sample(0, 0.0, seed=0, index=0, product_id="GHOST")
        with pytest.raises(StageError, match="unknown product 'GHOST'") as exc_info:
            train_flow(list(records) + [orphan], products, TrainConfig(k=2))
        assert exc_info.value.stage == "validate"

    def test_mixed_topologies_fail_in_validate_stage(self, small_corpus):
        records, _, products = small_corpus
        flat = generate_class_sample(
            0, 0.0, seed=0, index=0, topology=POSE2D17, product_id="P0-0000"
        )
        with pytest.raises(StageError, match="mixed topologies") as exc_info:
            train_flow(list(records) + [flat], products, TrainConfig(k=2))
        assert exc_info.value.stage == "validate"

    def test_corpus_topology_must_match_config(self, small_corpus):
        records, _, products = small_corpus
        config = TrainConfig(k=2, topology=POSE2D17, use_autoencoder=False)
        with pytest.raises(StageError, match="does not match configured") as exc_info:
            train_flow(records, products, config)
        assert exc_info.value.stage == "validate"

    def test_too_few_rows_for_k_fails_in_cluster_stage(self, small_corpus):
        _, _, products = small_corpus
        records = subject_records([0, 1], product_id="P0-0000")
        config = TrainConfig(k=6, use_autoencoder=False)
        with pytest.raises(StageError) as exc_info:
            train_flow(records, products, config)
        assert exc_info.value.stage == "cluster"

    def test_reference_selection_with_no_qualified_products(self, small_corpus):
        records, _, products = small_corpus
        config = TrainConfig(k=2, use_autoencoder=False, reference_min_images=9)
        with pytest.raises(StageError, match="no products have >= 9 images") as exc_info:
            train_flow(records, products, config)
        assert exc_info.value.stage == "validate"

    def test_reference_selection_that_drops_every_record(self, small_corpus):
        records, _, products = small_corpus
        # Popular enough to be the sole reference but absent from the corpus.
        phantom = make_product(
            "PHANTOM",
            avg_rating=5.0,
            num_reviews=10**6,
            image_ids=tuple(f"ph-{i}" for i in range(50)),
        )
        config = TrainConfig(
            k=2, use_autoencoder=False, reference_min_images=20, reference_top_k=1
        )
        with pytest.raises(StageError, match="removed every landmark record") as exc_info:
            train_flow(records, list(products) + [phantom], config)
        assert exc_info.value.stage == "validate"

    def test_reference_selection_keeping_everything_still_trains(self, small_corpus):
        records, _, products = small_corpus
        config = TrainConfig(
            k=len(SMALL_CLASSES),
            seed=0,
            use_autoencoder=False,
            reference_min_images=8,
        )
        bundle = train_flow(records, products, config)
        assert bundle.training_summary.n_images == len(records)

    def test_retraining_reproduces_the_same_centroids(self, small_corpus, small_bundle):
        records, _, products = small_corpus
        config = TrainConfig(k=len(SMALL_CLASSES), seed=0, use_autoencoder=False)
        again = train_flow(records, products, config)
        assert np.array_equal(
            again.centroid_model.cluster_centers_,
            small_bundle.centroid_model.cluster_centers_,
        )
        assert again.centroid_model.inertia_ == small_bundle.centroid_model.inertia_

    def test_training_summary_contents(self, small_corpus, small_bundle):
        records, _, products = small_corpus
        summary = small_bundle.training_summary
        assert summary.n_images == len(records)
        assert summary.n_products == len(products)
        assert summary.k == len(SMALL_CLASSES)
        assert summary.objective == small_bundle.centroid_model.inertia_


class TestTrainConfig:
    def test_default_hyper_schedule(self):
        hyper = TrainConfig(seed=7).resolve_hyper()
        assert hyper.learning_rate == 0.01
        assert hyper.min_learning_rate == 0.0001
        assert hyper.seed == 7

    def test_explicit_hyper_wins(self):
        from unpose import TrainingHyperparams

        hyper = TrainingHyperparams(learning_rate=0.05, min_learning_rate=0.001)
        assert TrainConfig(autoencoder_hyper=hyper).resolve_hyper() is hyper

    def test_trained_at_explicit(self):
        assert TrainConfig(trained_at=123).resolve_trained_at() == 123

    def test_trained_at_from_environment(self, monkeypatch):
        monkeypatch.setenv("SOURCE_DATE_EPOCH", "456")
        assert TrainConfig().resolve_trained_at() == 456
        monkeypatch.delenv("SOURCE_DATE_EPOCH")
        assert TrainConfig().resolve_trained_at() == 0


class TestInferFlow:
    def test_single_class_product_reports_other_centroids_missing(
        self, small_bundle, class_to_centroid
    ):
        records = subject_records([0], per_class=8)
        report = infer_flow(small_bundle, records, subject_product())
        assert report.n_images == 8
        assert report.present_centroids == {class_to_centroid[0]}
        missing_ids = {s.centroid_index for s in report.missing_centroids}
        assert missing_ids == set(range(6)) - {class_to_centroid[0]}
        assert report.qualifies is False  # 8 images is not a sparse imageset

    def test_missing_centroids_are_ordered_by_descending_score(self, small_bundle):
        report = infer_flow(small_bundle, subject_records([0]), subject_product())
        scores = [s.score for s in report.missing_centroids]
        assert scores == sorted(scores, reverse=True)

    def test_assignments_carry_squared_distances_and_ids(self, small_bundle):
        records = subject_records([0, 1])
        report = infer_flow(small_bundle, records, subject_product())
        assert [a.image_id for a in report.assignments] == [r.image_id for r in records]
        assert all(a.product_id == "SUBJ" for a in report.assignments)
        # training corpus is noiseless, so these vectors sit on the centroids
        # up to one rounding step in the mean
        assert all(0.0 <= a.distance < 1e-20 for a in report.assignments)

    def test_coverage_grows_monotonically_with_classes(self, small_bundle):
        missing_sizes = []
        for upto in range(1, len(SMALL_CLASSES) + 1):
            report = infer_flow(
                small_bundle, subject_records(SMALL_CLASSES[:upto]), subject_product()
            )
            missing_sizes.append(len(report.missing_centroids))
        assert missing_sizes == [5, 4, 3, 2, 1, 0]

    def test_duplicate_images_do_not_change_the_missing_set(self, small_bundle):
        base = subject_records([0, 2], per_class=1)
        doubled = subject_records([0, 2], per_class=3)
        report_a = infer_flow(small_bundle, base, subject_product())
        report_b = infer_flow(small_bundle, doubled, subject_product())
        assert {s.centroid_index for s in report_a.missing_centroids} == {
            s.centroid_index for s in report_b.missing_centroids
        }

    def test_empty_imageset_reports_everything_missing(self, small_bundle):
        report = infer_flow(small_bundle, [], subject_product())
        assert report.n_images == 0
        assert report.present_centroids == set()
        assert {s.centroid_index for s in report.missing_centroids} == set(range(6))
        assert report.assignments == []
        assert report.qualifies is True

    def test_qualifies_threshold_boundary(self, small_bundle):
        four = subject_records([0, 1, 2, 3], per_class=1)
        five = subject_records([0, 1, 2, 3, 4], per_class=1)
        assert infer_flow(small_bundle, four, subject_product()).qualifies is True
        assert infer_flow(small_bundle, five, subject_product()).qualifies is False
        # a custom threshold moves the boundary
        assert (
            infer_flow(small_bundle, four, subject_product(), p_threshold=4).qualifies
            is False
        )

    def test_full_coverage_leaves_nothing_missing(self, small_bundle):
        report = infer_flow(small_bundle, subject_records(SMALL_CLASSES), subject_product())
        assert report.missing_centroids == []
        assert report.present_centroids == set(range(6))

    def test_records_must_belong_to_the_audited_product(self, small_bundle):
        records = subject_records([0], product_id="OTHER")
        with pytest.raises(UnposeError, match="belongs to 'OTHER', not 'SUBJ'"):
            infer_flow(small_bundle, records, subject_product())

    def test_wrong_topology_at_inference_is_rejected(self, small_bundle):
        records = subject_records([0], topology=POSE2D17)
        with pytest.raises(TopologyMismatchError):
            infer_flow(small_bundle, records, subject_product())

    def test_report_dict_shape_and_serialization(self, small_bundle):
        report = infer_flow(small_bundle, subject_records([0]), subject_product())
        d = report.to_dict()
        assert set(d) == {"product_id", "n_images", "qualifies", "present", "missing", "assignments"}
        assert d["present"] == sorted(report.present_centroids)
        assert [m["centroid"] for m in d["missing"]] == [
            s.centroid_index for s in report.missing_centroids
        ]
        text = serialize_missing_report(report)
        assert json.loads(text) == d
        assert serialize_missing_report(report) == text  # stable bytes


class TestEvaluate:
    def test_under_detection_accuracy_fixture(self, small_bundle, class_to_centroid):
        """Subject covers 2 of 6 classes, so 4 centroids are detected missing;
        the label lists those 4 plus one the subject actually has."""
        records = subject_records([0, 1])
        detected_missing = set(range(6)) - {class_to_centroid[0], class_to_centroid[1]}
        true_missing = detected_missing | {class_to_centroid[0]}
        report = evaluate(small_bundle, [(records, subject_product(), true_missing)])
        (result,) = report.per_set
        assert result.accuracy == pytest.approx(4 / 5, rel=1e-12)
        assert result.precision == 1.0
        assert result.recall == pytest.approx(4 / 5, rel=1e-12)
        assert report.mean_accuracy == result.accuracy
        assert report.warnings == []

    def test_over_detection_accuracy_fixture(self, small_bundle, class_to_centroid):
        """Subject covers 3 of 6 classes (3 detected missing); the label lists
        only 2 of those, so the verbatim count ratio exceeds one."""
        records = subject_records([0, 1, 2])
        detected_missing = sorted(
            set(range(6)) - {class_to_centroid[c] for c in (0, 1, 2)}
        )
        true_missing = set(detected_missing[:2])
        report = evaluate(small_bundle, [(records, subject_product(), true_missing)])
        (result,) = report.per_set
        assert result.accuracy == pytest.approx(1.5, rel=1e-12)
        assert result.precision == pytest.approx(2 / 3, rel=1e-12)
        assert result.recall == 1.0

    def test_empty_true_missing_is_excluded_with_warning(
        self, small_bundle, class_to_centroid
    ):
        sparse = subject_records([0, 1])
        detected = set(range(6)) - {class_to_centroid[0], class_to_centroid[1]}
        labeled = [
            (sparse, subject_product(), detected),  # perfect set
            (subject_records([0], product_id="S2"), subject_product("S2"), set()),
        ]
        report = evaluate(small_bundle, labeled)
        first, second = report.per_set
        assert first.accuracy == 1.0
        assert second.accuracy is None
        assert second.recall is None
        assert second.precision == 0.0  # detected 5, none of them labeled
        assert report.mean_accuracy == 1.0  # second set excluded
        assert report.mean_precision == 0.5
        assert report.mean_recall == 1.0
        assert any("S2" in w and "empty true_missing" in w for w in report.warnings)

    def test_nothing_detected_gives_precision_one(self, small_bundle, class_to_centroid):
        full = subject_records(SMALL_CLASSES)
        true_missing = {class_to_centroid[0]}
        report = evaluate(small_bundle, [(full, subject_product(), true_missing)])
        (result,) = report.per_set
        assert result.detected_missing == []
        assert result.precision == 1.0
        assert result.accuracy == 0.0
        assert result.recall == 0.0

    def test_label_outside_centroid_range_is_rejected(self, small_bundle):
        records = subject_records([0])
        with pytest.raises(UnposeError, match="valid range is 0..5"):
            evaluate(small_bundle, [(records, subject_product(), {6})])

    def test_report_serialization_round_trip(self, small_bundle, class_to_centroid):
        records = subject_records([0, 1])
        true_missing = set(range(6)) - {class_to_centroid[0], class_to_centroid[1]}
        report = evaluate(small_bundle, [(records, subject_product(), true_missing)])
        obj = json.loads(serialize_eval_report(report))
        assert obj["aggregate"]["n_sets"] == 1
        assert obj["aggregate"]["mean_accuracy"] == 1.0
        assert obj["per_set"][0]["product_id"] == "SUBJ"

    def test_mean_accuracy_averages_defined_sets(self, small_bundle, class_to_centroid):
        c = class_to_centroid
        set_a = subject_records([0, 1], product_id="A")  # detects 4 missing
        set_b = subject_records([0, 1, 2], product_id="B")  # detects 3 missing
        labeled = [
            (set_a, subject_product("A"), set(range(6)) - {c[0], c[1]}),  # 4/4
            (set_b, subject_product("B"), set(range(6)) - {c[0], c[1]})  # 3/4
        ]
        report = evaluate(small_bundle, labeled)
        assert report.mean_accuracy == pytest.approx((1.0 + 0.75) / 2, rel=1e-12)


class TestProductParser:
    def line(self, **overrides):
        obj = {
            "product_id": "P1",
            "category": "apparel",
            "subcategory": "dresses",
            "product_type": "maxi",
            "avg_rating": 4.5,
            "num_reviews": 120,
            "image_ids": ["i1", "i2"],
        }
        obj.update(overrides)
        return json.dumps(obj)

    def test_valid_lines_and_blank_lines(self):
        text = self.line() + "\n\n" + self.line(product_id="P2") + "\n"
        products, diagnostics = parse_product_records(text)
        assert [p.product_id for p in products] == ["P1", "P2"]
        assert products[0].image_ids == ("i1", "i2")
        assert products[0].avg_rating == 4.5
        assert diagnostics == []

    def test_accepts_bytes_input(self):
        products, diagnostics = parse_product_records(self.line().encode())
        assert len(products) == 1 and diagnostics == []

    def test_malformed_json_reports_line_number(self):
        text = self.line() + "\n{oops\n" + self.line(product_id="P2")
        products, diagnostics = parse_product_records(text)
        assert [p.product_id for p in products] == ["P1", "P2"]
        assert len(diagnostics) == 1
        assert diagnostics[0].line == 2
        assert diagnostics[0].severity == "error"

    def test_missing_fields_are_named(self):
        text = json.dumps({"product_id": "P1"})
        products, diagnostics = parse_product_records(text)
        assert products == []
        assert "missing field(s)" in diagnostics[0].message
        assert "avg_rating" in diagnostics[0].message

    def test_non_object_line_rejected(self):
        _, diagnostics = parse_product_records("[1,2,3]")
        assert "must be an object" in diagnostics[0].message

    @pytest.mark.parametrize(
        "overrides, fragment",
        [
            ({"avg_rating": True}, "avg_rating must be a finite number"),
            ({"avg_rating": "high"}, "avg_rating must be a finite number"),
            ({"num_reviews": 3.5}, "num_reviews must be an integer"),
            ({"num_reviews": False}, "num_reviews must be an integer"),
            ({"image_ids": "i1"}, "image_ids must be a list of strings"),
            ({"image_ids": [1]}, "image_ids must be a list of strings"),
            ({"product_id": 7}, "field 'product_id' must be a string"),
        ],
    )
    def test_field_type_violations(self, overrides, fragment):
        products, diagnostics = parse_product_records(self.line(**overrides))
        assert products == []
        assert fragment in diagnostics[0].message

    def test_duplicate_product_ids_rejected(self):
        text = self.line() + "\n" + self.line(avg_rating=1.0)
        products, diagnostics = parse_product_records(text)
        assert len(products) == 1
        assert "duplicate product_id 'P1'" in diagnostics[0].message
        assert diagnostics[0].line == 2


class TestLabelParser:
    def test_valid_labels(self):
        text = '{"product_id": "A", "true_missing": [0, 2]}\n\n{"product_id": "B", "true_missing": []}'
        labels, diagnostics = parse_label_records(text)
        assert labels == {"A": {0, 2}, "B": set()}
        assert diagnostics == []

    def test_duplicate_label_rejected(self):
        text = '{"product_id": "A", "true_missing": [0]}\n{"product_id": "A", "true_missing": [1]}'
        labels, diagnostics = parse_label_records(text)
        assert labels == {"A": {0}}
        assert "duplicate label for 'A'" in diagnostics[0].message

    @pytest.mark.parametrize(
        "line, fragment",
        [
            ("[]", "must be an object"),
            ('{"product_id": "A"}', "needs 'product_id' and 'true_missing'"),
            ('{"product_id": 1, "true_missing": []}', "product_id must be a string"),
            ('{"product_id": "A", "true_missing": [true]}', "list of integers"),
            ('{"product_id": "A", "true_missing": "0"}', "list of integers"),
            ("}{", "}{"),
        ],
    )
    def test_malformed_lines(self, line, fragment):
        labels, diagnostics = parse_label_records(line)
        assert labels == {}
        assert len(diagnostics) == 1
        assert diagnostics[0].line == 1
