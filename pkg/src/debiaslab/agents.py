"""Forecaster agents: rational benchmark, synthetic extrapolator, trained
network, and remote LLM, all behind one `forecast(history) -> ForecastPair`
contract.

Histories arrive oldest-first at display precision. Agents are pure
functions of (history, config); the LLM agent delegates transport and
caching to the inference client.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

import numpy as np

from .ar1 import ForecastPair
from .errors import ConfigurationError, DataError, ForecastParseError

__all__ = [
    "RationalAgent",
    "ExtrapConfig",
    "ExtrapolativeAgent",
    "NetAgent",
    "LlmAgent",
    "parse_forecast_response",
    "extrapolative_slope",
]


@dataclass(frozen=True)
class RationalAgent:
    """Conditional-expectation forecaster for a known AR(1) process."""

    rho: float
    mean: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.rho <= 1.0:
            raise ConfigurationError(f"rho must be in [0, 1], got {self.rho}")

    @property
    def descriptor(self) -> str:
        return f"rational(rho={self.rho:g})"

    def forecast(self, history) -> ForecastPair:
        x = history[-1]
        dev = x - self.mean
        return ForecastPair(
            change_one=(self.rho - 1.0) * dev,
            change_two=(self.rho * self.rho - 1.0) * dev,
        )


@dataclass(frozen=True)
class ExtrapConfig:
    """Synthetic bias knob: theta overweights the latest innovation.

    theta = 0 reduces the agent to the rational benchmark exactly.
    """

    rho: float
    theta: float
    mean: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.rho <= 1.0:
            raise ConfigurationError(f"rho must be in [0, 1], got {self.rho}")
        if self.theta < 0:
            raise ConfigurationError(f"theta must be >= 0, got {self.theta}")


@dataclass(frozen=True)
class ExtrapolativeAgent:
    """Overreacting forecaster: adds theta times the newest innovation.

    With e_t = x_t - mean - rho*(x_{t-1} - mean), the level forecasts are
        F_t x_{t+1} = mean + rho*(x_t - mean) + theta*e_t
        F_t x_{t+2} = mean + rho*(F_t x_{t+1} - mean)
    returned as changes relative to x_t.
    """

    config: ExtrapConfig

    @property
    def descriptor(self) -> str:
        c = self.config
        return f"extrapolative(rho={c.rho:g},theta={c.theta:g})"

    def forecast(self, history) -> ForecastPair:
        if len(history) < 2:
            raise DataError("extrapolative agent needs a history of length >= 2")
        c = self.config
        x_t, x_prev = history[-1], history[-2]
        innovation = (x_t - c.mean) - c.rho * (x_prev - c.mean)
        level_one = c.mean + c.rho * (x_t - c.mean) + c.theta * innovation
        level_two = c.mean + c.rho * (level_one - c.mean)
        return ForecastPair(change_one=level_one - x_t, change_two=level_two - x_t)


def extrapolative_slope(rho: float, theta: float) -> float:
    """Population error-revision slope implied by the extrapolative agent.

    Forecast error is eps_{t+1} - theta*eps_t and the revision is
    (rho+theta)*eps_t - rho*theta*eps_{t-1}, so the projection slope is
        -theta*(rho+theta) / ((rho+theta)^2 + rho^2*theta^2),
    independent of sigma. Zero when theta is zero.
    """
    if theta == 0:
        return 0.0
    denom = (rho + theta) ** 2 + (rho * theta) ** 2
    return -theta * (rho + theta) / denom


class NetAgent:
    """Forecaster backed by a trained dense network.

    Features are the last `feature window` observations of the displayed
    history, standardized by the normalizer fitted on the training split;
    the two outputs are de-standardized back to changes.
    """

    def __init__(self, net, normalizer):
        from .net import output_width

        if output_width(net) != 2:
            raise ConfigurationError(
                "net agent needs a 2-output network (change_one, change_two)"
            )
        self.net = net
        self.normalizer = normalizer

    @property
    def descriptor(self) -> str:
        return f"net(window={self.normalizer.window})"

    def forecast(self, history) -> ForecastPair:
        from .net import forward

        k = self.normalizer.window
        if len(history) < k:
            raise DataError(f"history shorter than feature window {k}")
        features = self.normalizer.normalize_x(np.asarray(history[-k:], dtype=float))
        out = self.normalizer.denormalize_y(forward(self.net, features))
        return ForecastPair(change_one=float(out[0]), change_two=float(out[1]))


class LlmAgent:
    """Forecaster that elicits changes from a chat-completions endpoint."""

    def __init__(self, client, variant, max_tokens: int = 256):
        self.client = client
        self.variant = variant
        self.max_tokens = max_tokens

    @property
    def descriptor(self) -> str:
        return f"llm({self.client.model},{self.variant.kind})"

    def forecast(self, history) -> ForecastPair:
        from .client import ChatRequest
        from .datasets import render_prompt

        messages = render_prompt(self.variant, history)
        request = ChatRequest(
            model=self.client.model, messages=messages, max_tokens=self.max_tokens
        )
        text = self.client.complete_chat(request)
        return parse_forecast_response(text)


# Labeled answer keys take precedence; the free-text fallback accepts both
# ASCII and U+2212 minus signs and skips digits glued to words (change_1).
_LABELED = {
    1: re.compile(r"change[_\s]*1\s*[:=]\s*([+\-−]?\d+(?:\.\d+)?)", re.IGNORECASE),
    2: re.compile(r"change[_\s]*2\s*[:=]\s*([+\-−]?\d+(?:\.\d+)?)", re.IGNORECASE),
}
_STANDALONE = re.compile(
    r"(?<![\w.+\-−])[+\-−]?\d+(?:\.\d+)?(?!\w|\.\d)"
)


def _to_float(token: str) -> float:
    return float(token.replace("−", "-"))


def parse_forecast_response(text: str) -> ForecastPair:
    """Extract two numeric changes from a forecaster's reply.

    Primary rule: values under the labeled answer keys the prompt asks
    for. Fallback: the first two standalone signed decimals in reading
    order. Raises ForecastParseError (carrying the raw text) when fewer
    than two finite numbers can be recovered.
    """
    if not isinstance(text, str):
        raise ForecastParseError("response is not text", raw_text=repr(text))

    m1, m2 = _LABELED[1].search(text), _LABELED[2].search(text)
    if m1 and m2:
        one, two = _to_float(m1.group(1)), _to_float(m2.group(1))
    else:
        numbers = _STANDALONE.findall(text)
        if len(numbers) < 2:
            raise ForecastParseError(
                f"needed two numbers, found {len(numbers)}", raw_text=text
            )
        one, two = _to_float(numbers[0]), _to_float(numbers[1])

    if not (np.isfinite(one) and np.isfinite(two)):
        raise ForecastParseError("parsed values are not finite", raw_text=text)
    try:
        return ForecastPair(change_one=one, change_two=two)
    except DataError as exc:
        raise ForecastParseError(str(exc), raw_text=text) from exc
