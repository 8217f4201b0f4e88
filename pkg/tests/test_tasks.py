import pytest
from hypothesis import given
from hypothesis import strategies as st

from synthasu.tasks import (
    EMOTION_LABELS,
    GenerationPlan,
    TaskError,
    TaskSpec,
    UnknownLabelError,
    build_prompt,
    emotion_task,
    intent_task,
    plan_generation,
)


def test_default_emotion_labels():
    task = emotion_task()
    assert task.labels == ("neutral", "happy", "sad", "angry")
    assert set(task.labels) == set(EMOTION_LABELS)
    assert task.per_label_count == 1000


def test_emotion_prompt():
    assert build_prompt(emotion_task(), "happy") == "Generate a spoken utterance with happy emotion"


def test_intent_prompt():
    task = intent_task(["set alarms", "query contact", "mute the volume"])
    assert build_prompt(task, "set alarms") == "Generate a spoken utterance with intent to set alarms"


def test_unknown_label():
    with pytest.raises(UnknownLabelError):
        build_prompt(emotion_task(), "bored")


def test_labels_normalized():
    task = TaskSpec("intent", ("  Set Alarms ", "Mute the  Volume"))
    assert task.labels == ("set alarms", "mute the  volume")
    assert build_prompt(task, "SET ALARMS").endswith("intent to set alarms")


@pytest.mark.parametrize(
    "labels,count",
    [((), 1), (("a", "A"), 1), (("a",), 0), (("",), 1)],
)
def test_invalid_tasks(labels, count):
    with pytest.raises(TaskError):
        TaskSpec("emotion", labels, count)


def test_template_override():
    task = TaskSpec("emotion", ("sad",), 1, template="Say something {label}.")
    assert build_prompt(task, "sad") == "Say something sad."
    with pytest.raises(TaskError):
        TaskSpec("emotion", ("sad",), 1, template="no placeholder")


def test_plan_default_emotion():
    plan = plan_generation(emotion_task())
    assert plan.total == 4000
    assert [lb for lb, _ in plan.items] == list(EMOTION_LABELS)


def test_plan_46_intents():
    task = intent_task([f"intent {i}" for i in range(46)])
    assert plan_generation(task).total == 4600


def test_plan_singleton():
    plan = plan_generation(TaskSpec("emotion", ("calm",), 1))
    assert plan.items == (("calm", 1),)
    assert plan.total == 1


def test_from_dict_label_mapping():
    task = TaskSpec.from_dict(
        {"kind": "intent", "labels": {"set alarms": "alarm_set", "mute the volume": "audio_volume_mute"}}
    )
    assert task.labels == ("set alarms", "mute the volume")
    assert task.dataset_label("set alarms") == "alarm_set"
    assert task.per_label_count == 100
    assert TaskSpec.from_dict(task.to_dict()) == task


# labels drawn from characters absent from both templates
_label = st.text(alphabet="qxz0123456789 ", min_size=1, max_size=12).filter(lambda s: s.strip())


@given(st.lists(_label, min_size=1, max_size=8, unique_by=lambda s: s.strip()), st.sampled_from(["emotion", "intent"]))
def test_prompt_contains_label_once(labels, kind):
    task = TaskSpec(kind, tuple(labels))
    for label in task.labels:
        assert build_prompt(task, label).count(label) == 1


@given(st.lists(_label, min_size=1, max_size=20, unique_by=lambda s: s.strip()), st.integers(1, 2000))
def test_plan_total_property(labels, count):
    task = TaskSpec("intent", tuple(labels), count)
    plan = plan_generation(task)
    assert isinstance(plan, GenerationPlan)
    assert plan.total == len(task.labels) * count
    assert [lb for lb, _ in plan.items] == list(task.labels)
