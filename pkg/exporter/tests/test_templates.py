"""Template fidelity."""

from datetime import datetime, timedelta

import numpy as np
import pytest

from t3time_exporter.templates import TemplateError, build_prompt, frequency_word


def stamps(n, hours=1):
    t0 = datetime(2016, 7, 1)
    return [t0 + timedelta(hours=hours * i) for i in range(n)]


def test_etth1_prompt_contains_exact_hour_phrase():
    prompt = build_prompt([1.0, 2.0, 3.0], stamps(3), "ETTh1")
    assert "every [hour]" in prompt


def test_ili_prompt_contains_exact_week_phrase():
    prompt = build_prompt([1.0, 2.0], stamps(2), "ILI")
    assert "every [week]" in prompt


def test_full_sentence_shape():
    prompt = build_prompt([1.0, 2.5, 2.0], stamps(3), "ETTm1")
    assert prompt == ("From [2016-07-01 00:00:00] to [2016-07-01 02:00:00], "
                      "the values were [1.000, 2.500, 2.000] every [15 minutes]. "
                      "The total trend value was [1.000].")


def test_constant_window_trend_is_zero():
    prompt = build_prompt([4.2, 4.2, 4.2], stamps(3), "Weather")
    assert "The total trend value was [0.000]." in prompt


def test_trend_is_endpoint_difference():
    prompt = build_prompt([5.0, 100.0, 2.5], stamps(3), "Exchange")
    assert "[-2.500]" in prompt


def test_unregistered_dataset_lists_known_templates():
    with pytest.raises(TemplateError) as exc:
        build_prompt([1.0], stamps(1), "NOPE")
    message = str(exc.value)
    for name in ("ETTh1", "ETTm1", "ILI", "Weather"):
        assert name in message


def test_regeneration_is_byte_identical():
    values = np.random.default_rng(0).normal(size=8)
    first = build_prompt(values, stamps(8), "ECL")
    second = build_prompt(values.copy(), stamps(8), "ECL")
    assert first == second


def test_frequency_words_cover_all_benchmarks():
    assert frequency_word("ETTm2") == "15 minutes"
    assert frequency_word("ETTh2") == "hour"
    assert frequency_word("ECL") == "hour"
    assert frequency_word("Weather") == "10 minutes"
    assert frequency_word("Exchange") == "day"
