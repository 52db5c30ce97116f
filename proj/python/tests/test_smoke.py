import numpy as np
import pytest

import swimvg


def test_profiles_validate():
    toy = swimvg.validate_config("toy")
    assert toy["vision_depth"] == 4
    paper = swimvg.validate_config(swimvg.profile("paper"))
    assert paper["vision_dim"] == 768


def test_config_errors_carry_kind_and_subject():
    raw = swimvg.profile("toy")
    raw["patch_size"] = 7
    with pytest.raises(swimvg.Error) as info:
        swimvg.validate_config(raw)
    assert info.value.kind == "InvalidValue"
    assert info.value.subject == "patch_size"


def test_shapes_follow_swip_schedule():
    assert swimvg.shapes("toy")["vision_tokens_at_layer"] == [66, 67, 67, 67]


def test_box_geometry():
    assert swimvg.iou((0.5, 0.5, 0.2, 0.2), (0.5, 0.5, 0.2, 0.2)) == 1.0
    assert swimvg.giou((0.2, 0.5, 0.2, 0.2), (0.8, 0.5, 0.2, 0.2)) == pytest.approx(-0.5)
    loss = swimvg.grounding_loss((0.5, 0.5, 0.2, 0.2), (0.5, 0.5, 0.2, 0.2))
    assert loss["total"] == 0.0
    assert swimvg.precision_at([(0.5, 0.5, 0.2, 0.2)], [(0.5, 0.5, 0.2, 0.2)], 0.5) == 1.0
    with pytest.raises(swimvg.Error):
        swimvg.iou((0.5, 0.5, 0.0, 0.2), (0.5, 0.5, 0.2, 0.2))


def test_tokenizer_pads_to_length():
    vocab = swimvg.vocab()
    ids = swimvg.tokenize(["the", "red", "circle"], 6)
    assert len(ids) == 6
    assert [vocab[i] for i in ids[:3]] == ["the", "red", "circle"]


def test_generated_sample():
    s = swimvg.generate_sample(3)
    assert s["image"].shape == (64, 64, 3)
    assert s["image"].dtype == np.float32
    assert 0.0 <= s["image"].min() and s["image"].max() <= 1.0
    cx, cy, w, h = s["gt_box"]
    assert 0 < w <= 1 and 0 < h <= 1
    again = swimvg.generate_sample(3)
    assert np.array_equal(s["image"], again["image"])
    assert s["expression"] == again["expression"]


def test_model_forward_and_attention():
    model = swimvg.Model("toy")
    s = swimvg.generate_sample(0)
    box = model.forward(s["image"], s["word_ids"])
    assert all(0 < v < 1 for v in box)
    grid = model.attention_grid(s["image"], s["word_ids"])
    assert grid.shape == (8, 8)
    assert (grid >= 0).all() and 0 < grid.sum() <= 1 + 1e-6
    budget = model.budget
    assert budget["tunable"] + budget["frozen"] > budget["tunable"] > 0
    assert budget == swimvg.closed_form_budget("toy")


def test_train_save_load(tmp_path):
    model = swimvg.Model("toy")
    frozen = model.frozen_hash
    report = model.train(n_train=8, n_eval=4, epochs=1)
    assert model.step > 0
    assert model.frozen_hash == frozen
    assert set(report) >= {"step", "pr@0.5", "ambiguous", "unambiguous"}
    path = tmp_path / "m.ckpt"
    model.save(path)
    loaded = swimvg.Model.load(path)
    assert loaded.step == model.step
    assert loaded.evaluate(6) == model.evaluate(6)
    with pytest.raises(swimvg.Error) as info:
        swimvg.Model.load(tmp_path / "missing.ckpt")
    assert info.value.kind == "Io"
