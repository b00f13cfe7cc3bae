"""Dataset prompt templates.

Every benchmark shares one sentence shape; only the sampling-cadence word
differs. Slot contents stay wrapped in square brackets in the emitted text,
so an instantiated ETTh1 prompt literally contains ``every [hour]``.
"""

from __future__ import annotations

from datetime import datetime


class TemplateError(ValueError):
    pass


# cadence word per registered dataset
FREQUENCY_WORDS = {
    "ETTm1": "15 minutes",
    "ETTm2": "15 minutes",
    "ETTh1": "hour",
    "ETTh2": "hour",
    "ECL": "hour",
    "Weather": "10 minutes",
    "Exchange": "day",
    "ILI": "week",
}

_TEMPLATE = ("From [{start}] to [{end}], the values were [{values}] "
             "every [{frequency}]. The total trend value was [{trend}].")


def frequency_word(dataset: str) -> str:
    try:
        return FREQUENCY_WORDS[dataset]
    except KeyError:
        raise TemplateError(
            f"no prompt template registered for {dataset!r}; known datasets: "
            f"{', '.join(sorted(FREQUENCY_WORDS))}") from None


def build_prompt(values, timestamps: list[datetime], dataset: str) -> str:
    """One variable's lookback -> its natural-language description.

    `values` is the raw (pre-normalization) series for the window, printed
    to three decimals; the trend is the endpoint difference (cumulative
    change over the window).
    """
    word = frequency_word(dataset)
    if len(values) != len(timestamps):
        raise TemplateError(
            f"{len(values)} values for {len(timestamps)} timestamps")
    if len(values) == 0:
        raise TemplateError("cannot describe an empty window")
    rendered = ", ".join(f"{float(v):.3f}" for v in values)
    trend = float(values[-1]) - float(values[0])
    return _TEMPLATE.format(
        start=timestamps[0].strftime("%Y-%m-%d %H:%M:%S"),
        end=timestamps[-1].strftime("%Y-%m-%d %H:%M:%S"),
        values=rendered,
        frequency=word,
        trend=f"{trend:.3f}",
    )
