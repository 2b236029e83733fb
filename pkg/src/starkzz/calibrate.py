"""Root-finding and iterative pulse-level gate calibration.

Covers the always-on cancellation searches (phase root, amplitude root,
sequential chain nulling) and the closed-loop entangling-gate calibrations.
The gate loops simulate repeated-gate amplification sequences: the gate
propagator is computed once per iteration, powers of it generate
target-population trajectories versus repetition count, rotation angles are
fit from those trajectories, and Newton-style updates drive every monitored
angle to its goal.  Iteration stops when all angle errors are below the
termination threshold (0.01 rad by default).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.optimize

from .errors import (CancellationUnreachableError, InsufficientAmplitudeError,
                     NonconvergenceError)
from .operators import (DriveRole, DriveTone, SystemSpec,
                        build_rwa_hamiltonian_sparse, direct_coupling)
from .perturbation import PerturbativeInputs, zx_with_cancellation
from .pulse import (Envelope, EnvelopeKind, FrameChange, OperatingFrame, Play,
                    PulseSchedule, GateResult, _fit_rotation, propagate)
from .spectrum import (driven_pair_rates, pair_rates, targeted_label_energies,
                       undriven_reference)

TWO_PI = 2.0 * math.pi

#: Residual ZZ below which a pair counts as cancelled (GHz).
NULL_TOLERANCE = 5e-6
#: Angle-error threshold ending the iterative gate loops (rad).
ANGLE_TOLERANCE = 0.01

#: Hilbert dimension above which chain evaluations switch to targeted
#: shift-inverted solves instead of dense decompositions.
DENSE_LIMIT = 1024


@dataclass(frozen=True)
class CancellationSolution:
    """Per-qubit CW tone settings nulling every pair of a device."""

    amplitudes: tuple[float, ...]
    phases: tuple[float, ...]
    drive_frequency: float
    residual_zz: tuple[float, ...]
    stark_shifts: tuple[float, ...]


@dataclass
class CnotCalibration:
    control_amplitude: float
    target_amplitude: float
    control_phase: float
    target_phase: float
    target_drag: float
    target_skew: float
    target_frame_change: float
    control_frame_change: float
    duration: float
    converged: bool = False
    iterations: int = 0
    transcript: list = field(default_factory=list)


@dataclass
class CzCalibration:
    control_amplitude: float
    target_amplitude: float
    relative_phase: float
    target_frame_change: float
    control_frame_change: float
    gate_frequency: float
    duration: float
    converged: bool = False
    iterations: int = 0
    transcript: list = field(default_factory=list)


def _wrap_angle(x: float) -> float:
    return (x + math.pi) % TWO_PI - math.pi


# ---------------------------------------------------------------------------
# CW cancellation searches

def _pair_tones(system: SystemSpec, q0: int, q1: int):
    tones = {d.target: i for i, d in enumerate(system.drives)}
    if q0 not in tones or q1 not in tones:
        raise ValueError(f"system needs cancellation tones on qubits {q0} and {q1}")
    return tones[q0], tones[q1]


def _zz_at_phase(system: SystemSpec, q0: int, q1: int, phi: float) -> float:
    i0, i1 = _pair_tones(system, q0, q1)
    drives = list(system.drives)
    drives[i0] = replace(drives[i0], phase=drives[i1].phase + phi)
    return driven_pair_rates(system.with_drives(drives), q0, q1).zz


def find_cancellation_phase(system: SystemSpec, q0: int = 0, q1: int = 1,
                            tolerance: float = NULL_TOLERANCE) -> float:
    """Phase difference nulling the pair's ZZ at fixed tone amplitudes.

    Roots phi -> zz(phi) on [0, pi]; requires the modulation amplitude to
    exceed the static value so the endpoints bracket zero, otherwise
    InsufficientAmplitudeError asks for larger amplitudes.
    """
    zz0 = _zz_at_phase(system, q0, q1, 0.0)
    zz_pi = _zz_at_phase(system, q0, q1, math.pi)
    if zz0 * zz_pi > 0:
        # No sign change; accept an endpoint already inside tolerance
        # (amplitudes just sufficient to approach the null).
        if abs(zz_pi) < tolerance:
            return math.pi
        if abs(zz0) < tolerance:
            return 0.0
        raise InsufficientAmplitudeError(
            f"zz(0)={zz0:.3e} and zz(pi)={zz_pi:.3e} GHz do not bracket "
            "zero; raise the tone amplitudes")
    phi_star = scipy.optimize.brentq(
        lambda phi: _zz_at_phase(system, q0, q1, phi), 0.0, math.pi, xtol=1e-10)
    residual = _zz_at_phase(system, q0, q1, phi_star)
    if abs(residual) > tolerance:
        raise InsufficientAmplitudeError(
            f"root search stalled at |zz|={abs(residual):.3e} GHz")
    return float(phi_star)


def _zz_at_scale(system: SystemSpec, q0: int, q1: int, scale: float) -> float:
    drives = tuple(replace(d, amplitude=d.amplitude * scale) for d in system.drives)
    return driven_pair_rates(system.with_drives(drives), q0, q1).zz


def find_cancellation_amplitude(system: SystemSpec, q0: int = 0, q1: int = 1,
                                max_scale: float = 10.0,
                                tolerance: float = NULL_TOLERANCE,
                                grid_points: int = 24) -> float:
    """Minimal positive scale of the tone pair that nulls the pair's ZZ.

    The system's drives fix the amplitude ratio and the phase difference
    (pi for cancellation against a positive static value).  Returns 0.0
    when the undriven ZZ is already below tolerance; raises
    CancellationUnreachableError when no crossing exists below `max_scale`.
    """
    zz_zero = _zz_at_scale(system, q0, q1, 0.0)
    if abs(zz_zero) < tolerance:
        return 0.0
    previous_scale, previous_zz = 0.0, zz_zero
    for scale in np.linspace(0.0, max_scale, grid_points + 1)[1:]:
        zz = _zz_at_scale(system, q0, q1, float(scale))
        if zz_zero * zz <= 0.0:
            root = scipy.optimize.brentq(
                lambda s: _zz_at_scale(system, q0, q1, s),
                previous_scale, float(scale), xtol=1e-9)
            return float(root)
        previous_scale, previous_zz = float(scale), zz
    raise CancellationUnreachableError(
        f"no ZZ zero crossing up to {max_scale}x the template amplitudes "
        f"(last zz {previous_zz:.3e} GHz)")


# ---------------------------------------------------------------------------
# chain cancellation

class _ChainEvaluator:
    """Pairwise ZZ and Stark shifts on the full-chain Hamiltonian."""

    def __init__(self, system: SystemSpec, nu_d: float):
        self.base = system.without_drives()
        self.nu_d = nu_d
        self.dims = system.dims
        self.n = system.num_transmons
        self.dense = system.total_dimension <= DENSE_LIMIT
        self._undriven = self._energies((), self._all_labels())

    def _all_labels(self):
        labels = [tuple([0] * self.n)]
        for i in range(self.n):
            one = [0] * self.n
            one[i] = 1
            labels.append(tuple(one))
        return labels

    def _labels_for_pair(self, q0, q1):
        out = []
        for b0, b1 in ((0, 0), (0, 1), (1, 0), (1, 1)):
            label = [0] * self.n
            label[q0], label[q1] = b0, b1
            out.append(tuple(label))
        return out

    def _energies(self, drives, labels) -> dict:
        system = self.base.with_drives(drives)
        h = build_rwa_hamiltonian_sparse(system, self.nu_d)
        if self.dense:
            from .spectrum import labeled_spectrum
            spec = labeled_spectrum(h.toarray(), self.dims, self.nu_d)
            return {tuple(lab): spec.energy(lab) for lab in labels}
        found = targeted_label_energies(h, self.dims, labels)
        return {lab: e for lab, (e, _) in found.items()}

    def pair_zz(self, drives, q0: int, q1: int) -> float:
        labels = self._labels_for_pair(q0, q1)
        e = self._energies(drives, labels)
        return ((e[labels[3]] - e[labels[2]]) - (e[labels[1]] - e[labels[0]]))

    def stark_shifts(self, drives) -> list[float]:
        labels = self._all_labels()
        e = self._energies(drives, labels)
        ground = labels[0]
        shifts = []
        for i, label in enumerate(labels[1:]):
            driven = e[label] - e[ground]
            bare = self._undriven[label] - self._undriven[ground]
            shifts.append(driven - bare)
        return shifts

    def stark_shift_of(self, drives, qubit: int) -> float:
        ground = tuple([0] * self.n)
        one = [0] * self.n
        one[qubit] = 1
        labels = [ground, tuple(one)]
        e = self._energies(drives, labels)
        driven = e[labels[1]] - e[ground]
        bare = self._undriven[labels[1]] - self._undriven[ground]
        return driven - bare


def _seed_amplitude(evaluator: _ChainEvaluator, system: SystemSpec, nu_d: float,
                    seed_shift: float, phase: float, cap: float) -> float:
    """Tone amplitude on qubit 0 producing the requested Stark shift."""
    t0 = system.transmons[0]
    delta = t0.frequency - nu_d
    guess_sq = abs(2.0 * seed_shift * delta * (delta + t0.anharmonicity)
                   / t0.anharmonicity)
    guess = math.sqrt(guess_sq)

    def objective(amp: float) -> float:
        drives = (DriveTone(0, amp, nu_d, phase),)
        return abs(evaluator.stark_shift_of(drives, 0)) - seed_shift

    hi = min(cap, 3.0 * guess)
    if objective(hi) < 0:
        raise CancellationUnreachableError(
            f"seed Stark shift {seed_shift:.2e} GHz unreachable below "
            f"{hi * 1e3:.1f} MHz on qubit 0")
    return float(scipy.optimize.brentq(objective, 0.0, hi, xtol=1e-7))


def chain_cancellation(chain: SystemSpec, nu_d: float,
                       seed_stark_shift: float = 1e-3,
                       tolerance: float = NULL_TOLERANCE,
                       amplitude_cap: float = 0.08,
                       max_sweeps: int = 3) -> CancellationSolution:
    """Sequential pairwise ZZ nulling along a line of transmons.

    The first qubit's tone is set to induce the seed Stark shift; each
    following qubit's amplitude is then the minimal value nulling its
    pair's ZZ on the full-chain Hamiltonian, with the pairwise phase
    difference fixed at pi and earlier qubits held fixed.  A verification
    sweep recomputes every pair; if spectator dressing pushed an earlier
    pair above tolerance the forward pass is repeated (up to `max_sweeps`).
    """
    n = chain.num_transmons
    if n < 2:
        raise ValueError("chain cancellation needs at least 2 transmons")
    for c in chain.couplings:
        p, q = sorted(c.endpoints)
        if q != p + 1:
            raise ValueError("chain cancellation expects a line topology")
    above = [t.frequency < nu_d for t in chain.transmons]
    if not all(above):
        raise ValueError("the common tone frequency must sit above every qubit")

    evaluator = _ChainEvaluator(chain, nu_d)
    phases = [math.pi * (i % 2) for i in range(n)]
    amplitudes = [0.0] * n
    amplitudes[0] = _seed_amplitude(evaluator, chain, nu_d, seed_stark_shift,
                                    phases[0], amplitude_cap)

    def tones(up_to: int):
        return tuple(DriveTone(i, amplitudes[i], nu_d, phases[i])
                     for i in range(up_to + 1) if amplitudes[i] > 0.0)

    def solve_pair(i: int):
        """Amplitude on qubit i+1 nulling pair (i, i+1), earlier fixed."""
        def objective(amp: float) -> float:
            amplitudes[i + 1] = amp
            return evaluator.pair_zz(tones(i + 1), i, i + 1)

        zz0 = objective(0.0)
        if abs(zz0) < tolerance:
            amplitudes[i + 1] = 0.0
            return
        zz_cap = objective(amplitude_cap)
        if zz0 * zz_cap > 0:
            amplitudes[i + 1] = 0.0
            raise CancellationUnreachableError(
                f"pair ({i}, {i + 1}): no ZZ zero below "
                f"{amplitude_cap * 1e3:.0f} MHz (zz stuck at {zz_cap:.3e} GHz)")
        amplitudes[i + 1] = float(scipy.optimize.brentq(
            objective, 0.0, amplitude_cap, xtol=1e-7))

    residuals = [math.inf] * (n - 1)
    for _ in range(max_sweeps):
        for i in range(n - 1):
            solve_pair(i)
        all_tones = tones(n - 1)
        residuals = [evaluator.pair_zz(all_tones, i, i + 1) for i in range(n - 1)]
        if max(abs(r) for r in residuals) < tolerance:
            break
    else:
        worst = max(range(n - 1), key=lambda i: abs(residuals[i]))
        raise CancellationUnreachableError(
            f"pair ({worst}, {worst + 1}) residual {residuals[worst]:.3e} GHz "
            f"after {max_sweeps} sweeps")

    shifts = evaluator.stark_shifts(tones(n - 1))
    return CancellationSolution(
        amplitudes=tuple(amplitudes), phases=tuple(phases), drive_frequency=nu_d,
        residual_zz=tuple(residuals), stark_shifts=tuple(shifts))


# ---------------------------------------------------------------------------
# repeated-gate angle extraction

def _prep_state(frame: OperatingFrame, control: int, target: int,
                control_state: int, target_axis: str) -> np.ndarray:
    base = [0] * len(frame.dims)
    base[control] = control_state
    lo = list(base)
    hi = list(base)
    hi[target] = 1
    dim = frame.dim
    psi = np.zeros(dim, dtype=complex)
    i_lo = frame._label_pos(tuple(lo))
    i_hi = frame._label_pos(tuple(hi))
    if target_axis == "z":
        psi[i_lo] = 1.0
    elif target_axis == "x":
        psi[i_lo] = psi[i_hi] = 1.0 / math.sqrt(2.0)
    else:
        raise ValueError(f"unknown prep axis {target_axis!r}")
    return psi


def _bloch_of(frame: OperatingFrame, qubit: int, amp: np.ndarray) -> np.ndarray:
    idx0, idx1 = frame.qubit_pairings(qubit)
    cross = np.vdot(amp[idx0], amp[idx1])
    z = float(np.sum(np.abs(amp[idx0]) ** 2) - np.sum(np.abs(amp[idx1]) ** 2))
    return np.array([2.0 * cross.real, 2.0 * cross.imag, z])


def _repetition_trajectory(frame: OperatingFrame, u_op: np.ndarray, qubit: int,
                           psi0: np.ndarray, n_reps: int) -> np.ndarray:
    out = np.empty((n_reps + 1, 3))
    psi = psi0.copy()
    out[0] = _bloch_of(frame, qubit, psi)
    for n in range(1, n_reps + 1):
        psi = u_op @ psi
        out[n] = _bloch_of(frame, qubit, psi)
    return out


def _canonical_rotation(v: np.ndarray, desired: np.ndarray) -> np.ndarray:
    """Pick the rotation-vector representative closest to `desired`.

    Rotation vectors v and v (|v| - 2 pi)/|v| describe the same rotation;
    near half-turn angles the fit may return either branch.
    """
    norm = np.linalg.norm(v)
    if norm < 1e-12:
        return v
    alt = v * ((norm - TWO_PI) / norm)
    return v if np.linalg.norm(v - desired) <= np.linalg.norm(alt - desired) else alt


def _fit_gate_rotation(frame: OperatingFrame, u_op: np.ndarray, control: int,
                       target: int, control_state: int, n_reps: int,
                       desired: np.ndarray) -> np.ndarray:
    """Per-gate target rotation vector (radians) for one control state.

    Trajectories from a ground-state and an equator preparation are fit
    jointly so the rotation azimuth stays observable at half-turn angles.
    """
    times = np.arange(n_reps + 1, dtype=float)
    trajs = [
        _repetition_trajectory(
            frame, u_op, target,
            _prep_state(frame, control, target, control_state, axis), n_reps)
        for axis in ("z", "x")]

    def residual(params):
        from .pulse import _rotation_model
        parts = [(_rotation_model(params, times, traj[0]) - traj).ravel()
                 for traj in trajs]
        return np.concatenate(parts)

    seeds = [desired / TWO_PI]
    from .pulse import _rotation_seed
    seeds.append(_rotation_seed(times, trajs[0]))
    seeds.append(_rotation_seed(times, trajs[1]))
    best = None
    for seed in seeds:
        sol = scipy.optimize.least_squares(residual, seed, method="lm",
                                           max_nfev=2000)
        if best is None or sol.cost < best.cost:
            best = sol
    v = TWO_PI * best.x
    return _canonical_rotation(v, desired)


def _control_phase_per_gate(frame: OperatingFrame, u_op: np.ndarray, control: int,
                            target: int, n_reps: int,
                            target_axis: str = "z") -> float:
    """Control z-phase per gate from an equator control preparation.

    The target is prepared in an eigenstate of the conditional operation
    (|0> for conditional phases, |+x> for a conditional x flip) so every
    repetition contributes and the phase is read over the full turn.
    """
    lo = _prep_state(frame, control, target, 0, target_axis)
    hi = _prep_state(frame, control, target, 1, target_axis)
    psi = (lo + hi) / math.sqrt(2.0)
    traj = _repetition_trajectory(frame, u_op, control, psi, n_reps)
    times = np.arange(n_reps + 1, dtype=float)
    params, _ = _fit_rotation(times, traj, extra_seeds=[np.array([0.0, 0.0, 0.25]),
                                                        np.array([0.0, 0.0, -0.25])])
    return TWO_PI * params[2]


# ---------------------------------------------------------------------------
# CNOT calibration

def _cnot_schedule(cal: CnotCalibration, carrier: float, control: int, target: int,
                   sigma: float, rise: float) -> PulseSchedule:
    cr_env = Envelope(EnvelopeKind.FLAT_TOP_GAUSSIAN, cal.control_amplitude,
                      cal.duration, sigma, rise)
    tg_env = Envelope(EnvelopeKind.GAUSSIAN_DERIVATIVE_QUADRATURE,
                      cal.target_amplitude, cal.duration, sigma, rise,
                      drag_beta=cal.target_drag, skew_gamma=cal.target_skew)
    return PulseSchedule((
        Play(cr_env, carrier, cal.control_phase, control),
        Play(tg_env, carrier, cal.target_phase, target),
        FrameChange(cal.target_frame_change, target),
        FrameChange(cal.control_frame_change, control)))


def cnot_target(control_is_second: bool = True) -> np.ndarray:
    x = np.array([[0, 1], [1, 0]], dtype=complex)
    p0 = np.diag([1.0, 0.0]).astype(complex)
    p1 = np.diag([0.0, 1.0]).astype(complex)
    if control_is_second:
        return np.kron(np.eye(2), p0) + np.kron(x, p1)
    return np.kron(p0, np.eye(2)) + np.kron(p1, x)


def calibrate_cnot(system: SystemSpec, duration: float, control: int = 1,
                   target: int = 0, sigma: float = 10.0, rise: float = 2.0,
                   n_reps: int = 17, max_iterations: int = 50,
                   tolerance: float = ANGLE_TOLERANCE, dt: float = 0.05,
                   initial: CnotCalibration | None = None) -> CnotCalibration:
    """Iterative direct-CNOT calibration on a ZZ-cancelled system.

    Stage 1 coarsely scans the entangling-tone amplitude to a quarter-turn
    conditional rotation, stage 2 aligns the conditional axis along -x via
    the tone phase, stage 3 runs the fine loop (amplitudes, common phase,
    quadrature corrections, target frame change; all updates applied from
    one batch of fits), and stage 4 sets the control frame change from the
    control's phase accumulation over even gate repetitions.
    """
    frame = OperatingFrame(system)
    carrier = frame.dressed_frequency(target)
    gate_area = Envelope(EnvelopeKind.FLAT_TOP_GAUSSIAN, 1.0, duration, sigma,
                         rise).flat_area

    if initial is not None:
        cal = replace(initial, transcript=list(initial.transcript))
    else:
        # Perturbative starting point for the conditional and direct rates.
        t_c, t_t = system.transmons[control], system.transmons[target]
        cw = {d.target: d.amplitude for d in system.cancellation_drives()}
        nu_cw = (system.cancellation_drives()[0].frequency
                 if system.cancellation_drives() else carrier)
        j_total = sum(abs(c.strength) for c in system.couplings
                      if c.strength is not None) or 1e-3
        zx_unit = abs(float(zx_with_cancellation(PerturbativeInputs(
            nu0=t_c.frequency, nu1=t_t.frequency, alpha0=t_c.anharmonicity,
            alpha1=t_t.anharmonicity, j=j_total, omega0=cw.get(control, 0.0),
            omega1=cw.get(target, 0.0), nu_d=nu_cw, omega_cr=1.0))))
        omega_c0 = 0.25 / (zx_unit * gate_area)
        cal = CnotCalibration(
            control_amplitude=omega_c0, target_amplitude=0.25 / gate_area,
            control_phase=0.0, target_phase=0.0, target_drag=0.0,
            target_skew=0.0, target_frame_change=0.0, control_frame_change=0.0,
            duration=duration)

        def conditional(cal_trial) -> np.ndarray:
            probe = replace(cal_trial, target_amplitude=0.0)
            res = propagate(system, _cnot_schedule(probe, carrier, control, target,
                                                   sigma, rise),
                            dt=dt, q0=target, q1=control, frame=frame)
            v0 = _fit_gate_rotation(frame, res.full_unitary, control, target, 0,
                                    n_reps, np.zeros(3))
            v1 = _fit_gate_rotation(frame, res.full_unitary, control, target, 1,
                                    n_reps, np.array([-math.pi, 0.0, 0.0]))
            return 0.5 * (v0 - v1)

        # Stage 1: linear scan of the conditional angle vs tone amplitude.
        scan = []
        for factor in (0.6, 1.0, 1.4):
            amp = omega_c0 * factor
            vec = conditional(replace(cal, control_amplitude=amp))
            scan.append((amp, np.linalg.norm(vec)))
        amps = np.array([a for a, _ in scan])
        angles = np.array([theta for _, theta in scan])
        slope, intercept = np.polyfit(amps, angles, 1)
        cal.control_amplitude = float((0.5 * math.pi - intercept) / slope)

        # Stage 2: align the conditional rotation along -x.
        for _ in range(2):
            vec = conditional(cal)
            azimuth = math.atan2(vec[1], vec[0])
            error = _wrap_angle(math.pi - azimuth)
            cal.control_phase = _wrap_angle(cal.control_phase + error)
            cal.target_phase = _wrap_angle(cal.target_phase + error)
            if abs(error) < 0.5 * tolerance:
                break

    desired0 = np.zeros(3)
    desired1 = np.array([-math.pi, 0.0, 0.0])

    def measure(cal_trial) -> np.ndarray:
        sched = _cnot_schedule(cal_trial, carrier, control, target, sigma, rise)
        res = propagate(system, sched, dt=dt, q0=target, q1=control, frame=frame)
        v0 = _fit_gate_rotation(frame, res.full_unitary, control, target, 0,
                                n_reps, desired0)
        v1 = _fit_gate_rotation(frame, res.full_unitary, control, target, 1,
                                n_reps, desired1)
        return np.concatenate([v0 - desired0, v1 - desired1])

    def get_params(c) -> np.ndarray:
        return np.array([c.control_amplitude, c.target_amplitude,
                         c.control_phase, c.target_drag, c.target_skew,
                         c.target_frame_change])

    def set_params(c, p) -> None:
        shift = p[2] - c.control_phase
        c.control_amplitude = float(p[0])
        c.target_amplitude = float(p[1])
        c.control_phase = float(p[2])
        c.target_phase = float(c.target_phase + shift)  # phases move together
        c.target_drag = float(p[3])
        c.target_skew = float(p[4])
        c.target_frame_change = float(p[5])

    # Finite-difference Jacobian of the six angle residuals.
    steps = np.array([
        0.05 * abs(cal.control_amplitude) + 1e-5,
        0.05 * abs(cal.target_amplitude) + 1e-5,
        0.02, 0.5, 0.2, 0.02])

    def jacobian(c, r0) -> np.ndarray:
        p0 = get_params(c)
        jac = np.zeros((6, 6))
        for k in range(6):
            trial = replace(c, transcript=[])
            p = p0.copy()
            p[k] += steps[k]
            set_params(trial, p)
            jac[:, k] = (measure(trial) - r0) / steps[k]
        return jac

    converged = False
    jac = None
    previous_norm = math.inf
    damping = 1.0
    for iteration in range(max_iterations):
        residual = measure(cal)
        err = float(np.max(np.abs(residual)))
        cal.transcript.append({
            "iteration": iteration, "max_angle_error": err,
            "control_amplitude": cal.control_amplitude,
            "target_amplitude": cal.target_amplitude,
            "control_phase": cal.control_phase,
            "target_phase": cal.target_phase,
            "target_drag": cal.target_drag, "target_skew": cal.target_skew,
            "target_frame_change": cal.target_frame_change,
            "control_frame_change": cal.control_frame_change,
        })
        if err < tolerance:
            converged = True
            cal.iterations = iteration
            break
        if jac is None or (err > previous_norm and damping == 1.0):
            jac = jacobian(cal, residual)
        damping = 0.5 if err > previous_norm else 1.0
        update = np.linalg.lstsq(jac, residual, rcond=1e-8)[0]
        set_params(cal, get_params(cal) - damping * update)
        previous_norm = err
    if not converged:
        raise NonconvergenceError(
            f"CNOT fine loop above {tolerance} rad after {max_iterations} "
            "iterations", transcript=cal.transcript)

    # Stage 4: control frame change, with the target prepared along the
    # conditional rotation axis so the branch phase is read unambiguously.
    for _ in range(4):
        sched = _cnot_schedule(cal, carrier, control, target, sigma, rise)
        res = propagate(system, sched, dt=dt, q0=target, q1=control, frame=frame)
        phase = _control_phase_per_gate(frame, res.full_unitary, control, target,
                                        n_reps, target_axis="x")
        cal.transcript.append({"iteration": "control-frame",
                               "control_phase_per_gate": phase})
        if abs(phase) < tolerance:
            break
        # frame change exp(-i theta n) contributes -theta to the measured
        # control phase, so the correction adds the measured value
        cal.control_frame_change = _wrap_angle(cal.control_frame_change + phase)
    cal.converged = True
    return cal


def calibrated_cnot_schedule(system: SystemSpec, cal: CnotCalibration,
                             control: int = 1, target: int = 0,
                             sigma: float = 10.0, rise: float = 2.0) -> PulseSchedule:
    """Schedule realizing a calibrated CNOT on the given system."""
    frame = OperatingFrame(system)
    return _cnot_schedule(cal, frame.dressed_frequency(target), control, target,
                          sigma, rise)


def cnot_gate_result(system: SystemSpec, cal: CnotCalibration, control: int = 1,
                     target: int = 0, sigma: float = 10.0, rise: float = 2.0,
                     dt: float = 0.05) -> GateResult:
    """Propagate a calibrated CNOT and score it against the ideal gate."""
    frame = OperatingFrame(system)
    carrier = frame.dressed_frequency(target)
    sched = _cnot_schedule(cal, carrier, control, target, sigma, rise)
    return propagate(system, sched, dt=dt, q0=min(control, target),
                     q1=max(control, target),
                     target=cnot_target(control_is_second=control > target),
                     frame=frame)


# ---------------------------------------------------------------------------
# CZ calibration

def _cz_schedule(cal: CzCalibration, control: int, target: int, sigma: float,
                 rise: float) -> PulseSchedule:
    c_env = Envelope(EnvelopeKind.FLAT_TOP_GAUSSIAN, cal.control_amplitude,
                     cal.duration, sigma, rise)
    t_env = Envelope(EnvelopeKind.FLAT_TOP_GAUSSIAN, cal.target_amplitude,
                     cal.duration, sigma, rise)
    return PulseSchedule((
        Play(c_env, cal.gate_frequency, cal.relative_phase, control),
        Play(t_env, cal.gate_frequency, 0.0, target),
        FrameChange(cal.target_frame_change, target),
        FrameChange(cal.control_frame_change, control)))


def driven_zz_rate(system: SystemSpec, extra_tones, duration: float = 120.0,
                   dt: float = 0.05) -> float:
    """Time-domain conditional-phase rate under constant extra tones (GHz).

    Propagates the CW-dressed system with the extra tones held at constant
    amplitude and reads the computational diagonal phases at two times,
    resolving the short-time slope.  Used where mixed tone frequencies make
    the single-frame spectrum unavailable.
    """
    from .pulse import _DriveTerm, _evolve

    frame = OperatingFrame(system)
    terms = [_DriveTerm(target=t.target, start=0.0, envelope=None,
                        amplitude=t.amplitude, phase=t.phase,
                        detuning=t.frequency - frame.frame_frequency)
             for t in extra_tones]
    comp = frame.computational_indices(0, 1)
    times = (0.5 * duration, duration)
    _, snaps = _evolve(frame, terms, [], duration, dt, snapshot_times=times)
    phases = []
    for u_frame, t in zip(snaps, times):
        u_op = frame.to_operating(u_frame, t)
        diag = np.array([u_op[i, i] for i in comp])
        phases.append(float(np.angle(diag[0] * diag[3] * np.conj(diag[1] * diag[2]))))
    # unwrap with the half-duration sample
    delta = _wrap_angle(phases[1] - phases[0])
    return -(delta / (TWO_PI * 0.5 * duration))


def calibrate_cz(system: SystemSpec, duration: float, gate_frequency: float,
                 gate_amplitude: float, control: int = 1, target: int = 0,
                 sigma: float = 10.0, rise: float = 3.0, n_reps: int = 17,
                 max_iterations: int = 50, tolerance: float = ANGLE_TOLERANCE,
                 dt: float = 0.05,
                 initial: CzCalibration | None = None) -> CzCalibration:
    """Iterative conditional-phase gate calibration with pulsed tones.

    The relative phase of the pulsed tone pair is first set for maximum
    conditional-phase rate; the loop then tunes the control-side amplitude
    and the target frame change to meet the conditional and single-qubit
    phase goals, and finally sets the control frame change.
    """
    frame = OperatingFrame(system)

    if initial is not None:
        cal = replace(initial, transcript=list(initial.transcript))
    else:
        cal = CzCalibration(
            control_amplitude=gate_amplitude, target_amplitude=gate_amplitude,
            relative_phase=0.0, target_frame_change=0.0,
            control_frame_change=0.0, gate_frequency=gate_frequency,
            duration=duration)
        # Phase precalibration: maximize the conditional-phase rate.
        if gate_amplitude > 0.0:
            phis = np.linspace(0.0, TWO_PI, 9)[:-1]
            rates = []
            for phi in phis:
                tones = (DriveTone(control, gate_amplitude, gate_frequency, phi,
                                   role=DriveRole.GATE),
                         DriveTone(target, gate_amplitude, gate_frequency, 0.0,
                                   role=DriveRole.GATE),)
                rates.append(driven_zz_rate(system, tones, dt=dt))
            rates = np.array(rates)
            design = np.stack([np.ones_like(phis), np.cos(phis), np.sin(phis)],
                              axis=1)
            coef, *_ = np.linalg.lstsq(design, rates, rcond=None)
            best = math.atan2(coef[2], coef[1])
            values = {0.0: coef[0] + math.hypot(coef[1], coef[2]),
                      math.pi: coef[0] - math.hypot(coef[1], coef[2])}
            # pick the extremum with the larger |rate|
            offset = max(values, key=lambda k: abs(values[k]))
            cal.relative_phase = _wrap_angle(best + offset)
            cal.transcript.append({"iteration": "phase-precal",
                                   "relative_phase": cal.relative_phase,
                                   "zz_rate": values[offset]})

    desired = np.array([0.0, math.pi])

    def measure(cal_trial) -> np.ndarray:
        sched = _cz_schedule(cal_trial, control, target, sigma, rise)
        res = propagate(system, sched, dt=dt, q0=target, q1=control, frame=frame)
        angles = []
        for control_state, goal in ((0, 0.0), (1, math.pi)):
            v = _fit_gate_rotation(frame, res.full_unitary, control, target,
                                   control_state, n_reps,
                                   np.array([0.0, 0.0, goal]))
            angles.append(v[2])
        return np.array([_wrap_angle(angles[0] - desired[0]),
                         _wrap_angle(angles[1] - desired[1])])

    def get_params(c) -> np.ndarray:
        return np.array([c.control_amplitude, c.target_frame_change])

    def set_params(c, p) -> None:
        c.control_amplitude = float(p[0])
        c.target_frame_change = float(p[1])

    steps = np.array([0.08 * abs(cal.control_amplitude) + 1e-5, 0.05])

    def jacobian(c, r0) -> np.ndarray:
        jac = np.zeros((2, 2))
        p0 = get_params(c)
        for k in range(2):
            trial = replace(c, transcript=[])
            p = p0.copy()
            p[k] += steps[k]
            set_params(trial, p)
            jac[:, k] = (measure(trial) - r0) / steps[k]
        return jac

    converged = False
    jac = None
    previous_norm = math.inf
    for iteration in range(max_iterations):
        residual = measure(cal)
        err = float(np.max(np.abs(residual)))
        cal.transcript.append({
            "iteration": iteration, "max_angle_error": err,
            "control_amplitude": cal.control_amplitude,
            "target_frame_change": cal.target_frame_change,
            "control_frame_change": cal.control_frame_change})
        if err < tolerance:
            converged = True
            cal.iterations = iteration
            break
        if jac is None:
            jac = jacobian(cal, residual)
            if abs(np.linalg.det(jac)) < 1e-12:
                raise NonconvergenceError(
                    "CZ angle conditions are insensitive to the gate "
                    "amplitude (no conditional phase accumulates)",
                    transcript=cal.transcript)
        damping = 0.5 if err > previous_norm else 1.0
        update = np.linalg.solve(jac, residual)
        cap = np.array([0.5 * abs(cal.control_amplitude) + 1e-4, 1.0])
        update = np.clip(update, -cap, cap)
        set_params(cal, get_params(cal) - damping * update)
        if cal.control_amplitude < 0.0:
            cal.control_amplitude = 1e-4
        previous_norm = err
    if not converged:
        raise NonconvergenceError(
            f"CZ loop above {tolerance} rad after {max_iterations} iterations",
            transcript=cal.transcript)

    for _ in range(4):
        sched = _cz_schedule(cal, control, target, sigma, rise)
        res = propagate(system, sched, dt=dt, q0=target, q1=control, frame=frame)
        phase = _control_phase_per_gate(frame, res.full_unitary, control, target,
                                        n_reps)
        cal.transcript.append({"iteration": "control-frame",
                               "control_phase_per_gate": phase})
        if abs(phase) < tolerance:
            break
        cal.control_frame_change = _wrap_angle(cal.control_frame_change + phase)
    cal.converged = True
    return cal


def calibrated_cz_schedule(cal: CzCalibration, control: int = 1, target: int = 0,
                           sigma: float = 10.0, rise: float = 3.0) -> PulseSchedule:
    """Schedule realizing a calibrated conditional-phase gate."""
    return _cz_schedule(cal, control, target, sigma, rise)


def cz_gate_result(system: SystemSpec, cal: CzCalibration, control: int = 1,
                   target: int = 0, sigma: float = 10.0, rise: float = 3.0,
                   dt: float = 0.05) -> GateResult:
    """Propagate a calibrated conditional-phase gate and score it vs CZ."""
    frame = OperatingFrame(system)
    sched = _cz_schedule(cal, control, target, sigma, rise)
    cz = np.diag([1.0, 1.0, 1.0, -1.0]).astype(complex)
    return propagate(system, sched, dt=dt, q0=min(control, target),
                     q1=max(control, target), target=cz, frame=frame)
