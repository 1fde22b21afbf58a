"""Interactive session host: a human steers one agent, the planner the other.

A session owns the authoritative world state. Inbound messages queue up and
apply at tick boundaries; every tick advances the simulation by exactly one
step and emits a complete state snapshot, so a client can render any frame
from the latest message alone. The same session object backs both the
real-time websocket loop and deterministic scripted replays.
"""
from __future__ import annotations

import asyncio
import json
import time
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np
from fastapi import FastAPI, WebSocket, WebSocketDisconnect

from .filtering import FilterConfig
from .game import GameSpec
from .planner import (
    ModeBelief,
    MpcConfig,
    MpcStep,
    mode_belief_update,
    mpc_step,
    enumerate_modes,
)
from .refine import EquilibriumSet, RefinerConfig
from .scenarios import nominal_speed, preset
from .clustering import ClusterConfig

PROTOCOL_VERSION = 1

WAITING = "waiting"
RUNNING = "running"
FINISHED = "finished"
COLLIDED = "collided"


@dataclass(frozen=True)
class SessionConfig:
    scenario: str = "head_on"
    human: int = 0
    ego: int = 1
    dstar: float = 1.0
    total_time: float = 10.0
    replan_period: int = 2
    plan_horizon: float = 5.0
    seed: int = 0
    refiner_cfg: RefinerConfig = field(
        default_factory=lambda: RefinerConfig(outer_iterations=4, inner_iterations=40)
    )


def default_mode_provider(name: str, cfg: SessionConfig):
    """Build the scenario game and precompute its mode library."""
    from .scenarios import build_scenario

    scenario = preset(name)
    game = build_scenario(scenario)
    modes = enumerate_modes(game, filter_cfg=FilterConfig(seed=cfg.seed))
    return game, modes, scenario


class ProtocolError(Exception):
    pass


class Session:
    """One interactive world with precomputed modes and a belief/MPC loop."""

    def __init__(
        self,
        cfg: SessionConfig,
        provider: Optional[Callable] = None,
        session_id: str = "session-0",
    ):
        self.cfg = cfg
        self.session_id = session_id
        self._provider = provider or default_mode_provider
        self.status = WAITING
        self.overruns = 0
        self._load_scenario(cfg.scenario)

    def _load_scenario(self, name: str) -> None:
        self.status = WAITING
        game, modes, scenario = self._provider(name, self.cfg)
        if len(modes) == 0:
            raise ProtocolError(f"scenario {name!r} produced no modes")
        self.scenario_name = name
        self.game: GameSpec = game
        self.modes: EquilibriumSet = modes
        self.scenario = scenario
        self.u_bounds = np.asarray(scenario.u_bounds, dtype=float)
        self.mpc_cfg = MpcConfig(
            plan_horizon=self.cfg.plan_horizon,
            dt=game.dt,
            replan_period=self.cfg.replan_period,
            total_time=self.cfg.total_time,
            nominal_speed=nominal_speed(scenario, self.cfg.ego),
        )
        self.r_col = float(scenario.r_col)
        self._dyn = game.joint_dynamics()
        self.reset()

    def reset(self) -> None:
        self.t = 0
        # the interactive world starts parked: poses from the scenario, zero
        # speed and turn rate, so an idle human stays put until keys arrive
        self.x = self.game.x0.copy()
        for i in range(self.game.num_agents):
            off = self.game.state_offsets[i]
            self.x[off + 3] = 0.0
            self.x[off + 4] = 0.0
        self.human_input = np.zeros(2)
        self.belief = ModeBelief(
            distances=np.zeros(len(self.modes)), dstar=self.cfg.dstar
        )
        self._observed = [self.x[self.game.agent_state_slice(self.cfg.human)][:2].copy()]
        self._plan = None
        self._fallback = False
        self.overruns = 0
        self.status = RUNNING

    # -- message handling ---------------------------------------------------

    def handle_message(self, msg) -> Optional[dict]:
        """Apply one inbound message; returns an error frame if malformed."""
        if not isinstance(msg, dict) or "type" not in msg:
            return self._error("message must be an object with a 'type' field")
        kind = msg["type"]
        if kind == "input":
            try:
                dnu = float(msg["dnu"])
                domega = float(msg["domega"])
            except (KeyError, TypeError, ValueError):
                return self._error("input needs numeric 'dnu' and 'domega'")
            bounds = self.u_bounds[self.cfg.human]
            self.human_input = np.clip([dnu, domega], -bounds, bounds)
            return None
        if kind == "reset":
            self.reset()
            return None
        if kind == "set_dstar":
            try:
                value = float(msg["value"])
            except (KeyError, TypeError, ValueError):
                return self._error("set_dstar needs a numeric 'value'")
            if value <= 0:
                return self._error("dstar must be positive")
            self.belief = replace(self.belief, dstar=value)
            self.cfg = replace(self.cfg, dstar=value)
            return None
        if kind == "select_scenario":
            name = msg.get("name")
            if not isinstance(name, str):
                return self._error("select_scenario needs a string 'name'")
            try:
                self._load_scenario(name)
            except Exception as exc:
                return self._error(f"could not load scenario {name!r}: {exc}")
            return None
        return self._error(f"unknown message type {kind!r}")

    def _error(self, message: str) -> dict:
        return {"type": "error", "v": PROTOCOL_VERSION, "message": message}

    # -- simulation ---------------------------------------------------------

    def tick(self) -> dict:
        """Advance one step and return the outbound snapshot frame."""
        if self.status != RUNNING:
            return self._error(f"cannot tick while status is {self.status!r}")
        tic = time.perf_counter()
        game = self.game
        human, ego = self.cfg.human, self.cfg.ego

        self.belief = mode_belief_update(
            self.belief, np.array(self._observed), self.modes, self.t, game, human
        )
        if self._plan is None or self.t % self.mpc_cfg.replan_period == 0:
            try:
                step: MpcStep = mpc_step(
                    game, self.modes, self.belief, self.x, self.mpc_cfg,
                    self.cfg.refiner_cfg, prev_plan=self._plan, t_now=self.t, ego=ego,
                )
                self._plan = step.plan
                u_ego = step.control
                self._fallback = step.fallback
            except Exception:
                self._fallback = True
                if self._plan is None:
                    u_ego = np.zeros(2)
                else:
                    u_ego = self._plan.controls[0, game.agent_input_slice(ego)]
        else:
            k = self.t % self.mpc_cfg.replan_period
            u_ego = self._plan.controls[
                min(k, self._plan.controls.shape[0] - 1), game.agent_input_slice(ego)
            ]
            self._fallback = False

        bounds = self.u_bounds[human]
        u_h = np.clip(self.human_input, -bounds, bounds)
        u = np.zeros(game.m)
        u[game.agent_input_slice(human)] = u_h
        u[game.agent_input_slice(ego)] = u_ego
        self.x = self._dyn.step(self.x, u)
        self.t += 1
        self._observed.append(self.x[game.agent_state_slice(human)][:2].copy())

        p_h = self.x[game.agent_state_slice(human)][:2]
        p_e = self.x[game.agent_state_slice(ego)][:2]
        if float(np.linalg.norm(p_h - p_e)) < self.r_col:
            self.status = COLLIDED
        elif self.t >= self.mpc_cfg.total_steps:
            self.status = FINISHED

        elapsed = time.perf_counter() - tic
        if elapsed > game.dt:
            self.overruns += 1
        return self.snapshot()

    def snapshot(self) -> dict:
        """Complete render-ready state frame."""
        game = self.game
        agents = []
        for i in range(game.num_agents):
            s = self.x[game.agent_state_slice(i)]
            agents.append(
                {
                    "p": float(s[0]),
                    "q": float(s[1]),
                    "theta": float(s[2]),
                    "nu": float(s[3]),
                    "omega": float(s[4]),
                }
            )
        modes_out = []
        for mode in self.modes.modes:
            per_agent = []
            for i in range(game.num_agents):
                path = mode.trajectory.states[:, game.agent_state_slice(i)][:, :2]
                per_agent.append([{"p": float(p), "q": float(q)} for p, q in path])
            modes_out.append(per_agent)
        plan_out = []
        if self._plan is not None:
            epath = self._plan.states[:, game.agent_state_slice(self.cfg.ego)][:, :2]
            plan_out = [{"p": float(p), "q": float(q)} for p, q in epath]
        return {
            "type": "state",
            "v": PROTOCOL_VERSION,
            "t": self.t,
            "agents": agents,
            "modes": modes_out,
            "belief": {
                "d": [float(d) for d in self.belief.distances],
                "locked": self.belief.locked,
                "dstar": self.belief.dstar,
            },
            "plan": plan_out,
            "status": self.status,
            "overruns": self.overruns,
        }


# ---------------------------------------------------------------------------
# Websocket transport
# ---------------------------------------------------------------------------

def create_app(cfg: SessionConfig = SessionConfig(), provider=None, realtime: bool = True):
    """FastAPI app exposing the session protocol on /ws.

    With ``realtime=False`` the session ticks once after each inbound client
    message instead of on a wall-clock timer; scripted clients use this for
    deterministic lockstep testing.
    """
    app = FastAPI(title="modeplan sim server")
    counter = {"n": 0}

    @app.get("/")
    def info():
        return {
            "server": "modeplan",
            "protocol": PROTOCOL_VERSION,
            "scenario": cfg.scenario,
            "realtime": realtime,
        }

    @app.websocket("/ws")
    async def ws_endpoint(ws: WebSocket):
        await ws.accept()
        counter["n"] += 1
        session = Session(cfg, provider=provider, session_id=f"session-{counter['n']}")
        await ws.send_text(json.dumps(session.snapshot()))
        try:
            if realtime:
                await _realtime_loop(ws, session)
            else:
                await _lockstep_loop(ws, session)
        except WebSocketDisconnect:
            pass

    async def _lockstep_loop(ws, session: Session):
        while True:
            raw = await ws.receive_text()
            frame = _parse_frame(raw, session)
            if frame is not None:
                await ws.send_text(json.dumps(frame))
                continue
            if session.status == RUNNING:
                await ws.send_text(json.dumps(session.tick()))
            else:
                await ws.send_text(json.dumps(session.snapshot()))

    async def _realtime_loop(ws, session: Session):
        loop = asyncio.get_event_loop()
        next_tick = loop.time()
        while True:
            # drain queued messages, then advance at fixed dt
            try:
                while True:
                    raw = await asyncio.wait_for(ws.receive_text(), timeout=0.0005)
                    frame = _parse_frame(raw, session)
                    if frame is not None:
                        await ws.send_text(json.dumps(frame))
            except asyncio.TimeoutError:
                pass
            if session.status == RUNNING:
                await ws.send_text(json.dumps(session.tick()))
            next_tick += session.game.dt
            delay = next_tick - loop.time()
            if delay > 0:
                await asyncio.sleep(delay)
            else:
                next_tick = loop.time()

    def _parse_frame(raw: str, session: Session) -> Optional[dict]:
        try:
            msg = json.loads(raw)
        except json.JSONDecodeError:
            return session._error("frame is not valid JSON")
        return session.handle_message(msg)

    return app


def serve(host: str = "127.0.0.1", port: int = 8710,
          cfg: SessionConfig = SessionConfig()) -> None:
    import uvicorn

    uvicorn.run(create_app(cfg), host=host, port=port, log_level="info")
