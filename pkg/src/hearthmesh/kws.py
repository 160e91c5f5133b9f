"""Keyword-spotting units as executable state machines.

Two integrations are modelled.  *Coexist*: a KWS controller talks to the
appliance controller over an inter-chip channel (lossless FIFO, fixed
latency).  *Unified*: one chip runs both, so every inter-chip term is zero.

Step functions return effects whose ``delay_ms`` is relative to the time
of the input event; the simulator schedules them.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

from .grammar import Intent, Utterance

# accuracy by number of command words
ACCURACY_PRESETS = ((2, 0.917), (10, 0.753), (30, 0.635))


def preset_accuracy(command_words: int) -> float:
    for limit, acc in ACCURACY_PRESETS:
        if command_words <= limit:
            return acc
    return ACCURACY_PRESETS[-1][1]


class NotAListenerError(ValueError):
    pass


# -- acoustics -----------------------------------------------------------------

@dataclass(frozen=True)
class AcousticModel:
    reference_intensity: float = 65.0  # default speaking level at 1 m
    exponent: float = 2.0
    threshold: float = 45.0
    slope_ms_per_db: float = 3.0
    max_delay_ms: float = 150.0
    min_delay_ms: float = 30.0
    reference_distance_m: float = 1.0

    def __post_init__(self):
        if self.exponent <= 0 or self.reference_distance_m <= 0:
            raise ValueError("exponent and reference distance must be positive")
        if not 0 <= self.min_delay_ms <= self.max_delay_ms:
            raise ValueError("need 0 <= min_delay_ms <= max_delay_ms")

    def received(self, intensity: float, distance_m: float) -> float:
        """Inverse-power attenuation expressed in the dB-like intensity scale."""
        return intensity - 10.0 * self.exponent * math.log10(1.0 + distance_m / self.reference_distance_m)

    def detection_delay(self, received: float) -> float:
        margin = received - self.threshold
        return min(self.max_delay_ms, max(self.min_delay_ms, self.max_delay_ms - self.slope_ms_per_db * margin))

    @classmethod
    def from_dict(cls, doc: dict) -> "AcousticModel":
        return cls(**{k: float(v) for k, v in doc.items()})

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


@dataclass(frozen=True)
class Hearing:
    heard: bool
    received: float
    delay_ms: float


def hear_check(am: AcousticModel, u: Utterance, d, rng, accuracy: float | None = None) -> Hearing:
    """Decide whether device ``d`` detects utterance ``u``.

    Exactly one draw is taken from ``rng`` per call, whether or not the
    utterance is in range, so the random stream does not depend on geometry.
    """
    if not (d.has_kws and d.components.microphone):
        raise NotAListenerError(f"device {d.id!r} has no KWS microphone")
    if accuracy is None:
        accuracy = d.kws.accuracy if d.kws.accuracy is not None else 1.0
    dx = u.position[0] - d.position[0]
    dy = u.position[1] - d.position[1]
    recv = am.received(u.intensity, math.hypot(dx, dy))
    draw = rng.random()
    heard = recv >= am.threshold and draw < accuracy
    return Hearing(heard, recv, am.detection_delay(recv))


# -- events and effects -----------------------------------------------------------

@dataclass(frozen=True)
class SpottedWake:
    pass


@dataclass(frozen=True)
class SpottedCommand:
    intent: Intent


@dataclass(frozen=True)
class Tick:
    ms: float


@dataclass(frozen=True)
class ApplianceNotify:
    ok: bool
    reason: str | None = None


@dataclass(frozen=True)
class PlayResponse:
    kind: str  # wake | success | failure
    delay_ms: float = 0.0


@dataclass(frozen=True)
class NotifyAppliance:
    payload: object  # "wake" or Intent
    delay_ms: float = 0.0


@dataclass(frozen=True)
class Perform:
    action: str
    delay_ms: float = 0.0


@dataclass(frozen=True)
class NotifyKws:
    ok: bool
    reason: str | None = None
    delay_ms: float = 0.0


@dataclass(frozen=True)
class ShowIndicator:
    delay_ms: float = 0.0


@dataclass
class WakeState:
    T_ms: float = 10_000.0
    t_ms: float = 0.0
    cont: bool = True

    @property
    def awake(self) -> bool:
        return self.t_ms > 0


@dataclass
class KwsUnit:
    approach: str
    wake: WakeState = field(default_factory=WakeState)
    accuracy: float = 1.0
    false_trigger_per_hour: float = 0.0
    feedback_ms: float = 200.0
    interchip_ms: float = 20.0
    indicator: bool = False

    @property
    def link_ms(self) -> float:
        """Inter-chip latency actually paid (zero on a unified chip)."""
        return self.interchip_ms if self.approach == "coexist" else 0.0

    @classmethod
    def from_device(cls, d, vocabulary=None) -> "KwsUnit":
        k = d.kws
        if k.approach == "none":
            raise NotAListenerError(f"device {d.id!r} has no KWS unit")
        acc = k.accuracy
        if acc is None:
            acc = preset_accuracy(vocabulary.command_word_count if vocabulary else 0)
        return cls(
            approach=k.approach,
            wake=WakeState(T_ms=k.T_ms, cont=k.cont),
            accuracy=acc,
            false_trigger_per_hour=k.false_trigger_per_hour,
            feedback_ms=k.feedback_ms,
            interchip_ms=k.interchip_ms,
            indicator=k.indicator,
        )


def kws_step(unit: KwsUnit, event) -> list:
    """KWS-side main loop for either approach."""
    w = unit.wake
    ic = unit.link_ms
    if isinstance(event, SpottedWake):
        w.t_ms = w.T_ms  # a wake inside an open window restarts it
        return [PlayResponse("wake", unit.feedback_ms), NotifyAppliance("wake", ic)]
    if isinstance(event, SpottedCommand):
        if w.t_ms <= 0:
            return []
        w.t_ms = w.T_ms if w.cont else 0.0
        return [NotifyAppliance(event.intent, ic)]
    if isinstance(event, Tick):
        w.t_ms = max(0.0, w.t_ms - event.ms)
        return []
    if isinstance(event, ApplianceNotify):
        return [PlayResponse("success" if event.ok else "failure", unit.feedback_ms)]
    raise TypeError(f"unknown KWS event {event!r}")


def coexist_step(unit: KwsUnit, event) -> list:
    if unit.approach != "coexist":
        raise ValueError("coexist_step needs a coexist unit")
    return kws_step(unit, event)


class Appliance:
    """Appliance controller: the device descriptor plus its mutable state."""

    def __init__(self, device, state=None):
        self.device = device
        self.state = dict(device.state if state is None else state)

    def is_valid(self, action: str) -> bool:
        spec = self.device.actions.get(action)
        if spec is None:
            return False
        return all(self.state.get(a) == v for a, v in spec.requires)

    def apply(self, action: str) -> bool:
        if not self.is_valid(action):
            return False
        spec = self.device.actions[action]
        self.state[spec.attr] = spec.value  # re-applying the current value still succeeds
        return True


def appliance_step(appliance: Appliance, notify) -> list:
    """Appliance-side main loop; ``notify`` is "wake", an Intent or an action id."""
    if notify == "wake":
        return [ShowIndicator()] if appliance.device.kws.indicator else []
    action = notify.action if isinstance(notify, Intent) else notify
    if appliance.apply(action):
        return [Perform(action), NotifyKws(True)]
    return [NotifyKws(False, "invalid-action")]


def _composed(unit: KwsUnit, appliance: Appliance, event) -> list:
    ic = unit.link_ms
    out = []
    for eff in kws_step(unit, event):
        if not isinstance(eff, NotifyAppliance):
            out.append(eff)
            continue
        for aeff in appliance_step(appliance, eff.payload):
            if isinstance(aeff, NotifyKws):
                back = eff.delay_ms + ic
                for k in kws_step(unit, ApplianceNotify(aeff.ok, aeff.reason)):
                    out.append(PlayResponse(k.kind, back + k.delay_ms))
            elif isinstance(aeff, Perform):
                out.append(Perform(aeff.action, eff.delay_ms))
            else:
                out.append(ShowIndicator(eff.delay_ms))
    return out


def unified_step(unit: KwsUnit, appliance: Appliance, event) -> list:
    """One chip: KWS and appliance logic with no inter-chip link."""
    if unit.approach != "unified":
        raise ValueError("unified_step needs a unified unit")
    return _composed(unit, appliance, event)


def coexist_device_step(unit: KwsUnit, appliance: Appliance, event) -> list:
    """Both coexist controllers composed, inter-chip delays included."""
    if unit.approach != "coexist":
        raise ValueError("coexist_device_step needs a coexist unit")
    return _composed(unit, appliance, event)
