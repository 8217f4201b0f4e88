import pytest
from hypothesis import given
from hypothesis import strategies as st

from synthasu.tasks import GenerationPlan, TaskSpec, emotion_task, plan_generation
from synthasu.textgen import (
    BackendError,
    CannedBackend,
    GenerationConfig,
    QuotaUnmetError,
    Rejected,
    StubLLM,
    filter_batch,
    filter_text,
    generate_texts,
    load_texts,
    make_backend,
    save_texts,
)


class FailingBackend:
    backend_id = "failing"

    def __init__(self):
        self.calls = 0

    def generate(self, prompt, max_output_tokens, temperature, seed):
        self.calls += 1
        raise ConnectionError("unreachable")


def test_config_defaults():
    cfg = GenerationConfig()
    assert cfg.max_output_tokens == 32
    assert cfg.temperature == 1.0
    assert cfg.max_chars == 200
    assert cfg.overgeneration_factor == 5


@pytest.mark.parametrize("kw", [{"max_output_tokens": 0}, {"temperature": -0.1}])
def test_config_invalid(kw):
    with pytest.raises(ValueError):
        GenerationConfig(**kw)


def test_filter_strips_quotes():
    assert filter_text('"All I want to do is cry."') == "All I want to do is cry."


def test_filter_rejections():
    assert filter_text("   ") is Rejected.EMPTY
    assert filter_text('""') is Rejected.EMPTY
    assert filter_text("x" * 201) is Rejected.TOO_LONG
    assert filter_text("x" * 200) == "x" * 200


def test_filter_passthrough():
    # inner quotes and unmatched quotes stay untouched
    assert filter_text('  He said "no" today ') == 'He said "no" today'
    assert filter_text('"unbalanced') == '"unbalanced'


def test_batch_duplicates():
    assert filter_batch(["ok", "ok"]) == ["ok", Rejected.DUPLICATE]
    assert filter_batch(['"ok"', "ok "]) == ["ok", Rejected.DUPLICATE]


@given(st.text(max_size=60))
def test_filter_idempotent(raw):
    once = filter_text(raw)
    if isinstance(once, str):
        assert filter_text(once) == once


def test_generate_florida():
    plan = GenerationPlan((("happy", 1),))
    out = generate_texts(plan, CannedBackend(["We had so much fun in Florida."]))
    assert len(out) == 1
    assert out[0].text == "We had so much fun in Florida."
    assert out[0].label == "happy"
    assert out[0].prompt == "Generate a spoken utterance with happy emotion"
    assert out[0].backend_id == "canned"


def test_generate_empty_plan():
    assert generate_texts(GenerationPlan(()), StubLLM()) == []


def test_generate_cycled_outputs():
    canned = ["I am home.", "The bus is late.", "It is Tuesday."]
    out = generate_texts(GenerationPlan((("neutral", 3),)), CannedBackend(canned))
    # seeds 0, 1, 2 pick the outputs in order
    assert [r.text for r in out] == canned
    assert [r.index for r in out] == [0, 1, 2]


def test_quota_unmet_reports_shortfall():
    plan = GenerationPlan((("sad", 4), ("happy", 1)))
    with pytest.raises(QuotaUnmetError) as err:
        generate_texts(plan, CannedBackend(["same", "same again"]))
    assert err.value.shortfall == {"sad": 2}


def test_backend_failure_bounded():
    backend = FailingBackend()
    with pytest.raises(BackendError):
        generate_texts(GenerationPlan((("sad", 1),)), backend, GenerationConfig(backend_retries=2))
    assert backend.calls == 3


def test_stub_deterministic_and_quota():
    task = TaskSpec("emotion", ("neutral", "happy", "sad", "angry"), 25)
    a = generate_texts(task, StubLLM(), GenerationConfig(seed=7))
    b = generate_texts(task, StubLLM(), GenerationConfig(seed=7, workers=4))
    assert a == b
    assert len(a) == 100
    for label in task.labels:
        texts = [r.text for r in a if r.label == label]
        assert len(texts) == 25 and len(set(texts)) == 25
    assert [r.label for r in a] == [lb for lb in task.labels for _ in range(25)]


def test_intent_template_used():
    task = TaskSpec("intent", ("set alarms",), 2)
    out = generate_texts(task, StubLLM())
    assert all(r.prompt == "Generate a spoken utterance with intent to set alarms" for r in out)


def test_save_load_roundtrip(tmp_path):
    out = generate_texts(TaskSpec("emotion", ("sad",), 3), StubLLM())
    save_texts(out, tmp_path / "t.jsonl")
    assert load_texts(tmp_path / "t.jsonl") == out


def test_make_backend():
    assert make_backend("stub").backend_id == "stub"
    with pytest.raises(ValueError):
        make_backend("gpt-9")


@given(st.integers(1, 6), st.integers(0, 1000))
def test_plan_counts_met(count, seed):
    task = TaskSpec("emotion", ("happy", "sad"), count)
    out = generate_texts(task, StubLLM(), GenerationConfig(seed=seed))
    plan = plan_generation(task)
    for label, n in plan.items:
        texts = [r.text for r in out if r.label == label]
        assert len(texts) == n
        assert len(set(texts)) == n


def test_default_emotion_plan_size():
    assert plan_generation(emotion_task()).total == 4000
