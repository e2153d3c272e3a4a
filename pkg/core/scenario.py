#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
场景脚本模块

解析并执行场景脚本，生成逐行 JSON 记录（transcript）并检查断言
"""

import json
import os
import re
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

from loguru import logger

from core.contracts import SessionState
from core.datastore import rule_from_text
from core.enclave import UNLIMITED
from core.errors import ReGovError, ScriptError, SimulationError
from core.network import Network
from core.policy import RuleType, UsagePolicy, parse_policy
from core.reports import compliance_report

STEP_VERBS = (
    "fetch", "open", "advance_clock", "sweep", "monitor", "set_rule", "remove_rule", "upload",
    "move_node", "fail", "recover", "tick", "repeat", "expect",
)
EXPECT_KINDS = ("remaining", "held", "grants", "denials", "last", "session", "report", "gas")
PROVIDERS = ("enclave", "clock", "geo")

_DURATION = re.compile(r"^(\d+)([smhd]?)$")
_UNITS = {"": 1, "s": 1, "m": 60, "h": 3600, "d": 86400}

# 这些记录不参与 "expect last" 的比较
_BOOKKEEPING = ("gas", "expect_failed")


def parse_duration(text: str) -> int:
    """把 20d、90m、15 这样的时长转换为秒"""
    match = _DURATION.match(text.strip())
    if not match:
        raise ValueError(f"无法解析时长: {text}")
    return int(match.group(1)) * _UNITS[match.group(2)]


def split_resource(text: str) -> Tuple[str, str]:
    """把 OWNER:PATH 拆成 (所有者, 相对路径)"""
    owner, sep, path = text.partition(":")
    if not sep or not owner or not path.startswith("/"):
        raise ValueError(f"资源引用应形如 OWNER:/path: {text}")
    return owner, path


@dataclass(frozen=True)
class Step:
    line: int
    verb: str
    args: Tuple[str, ...]

    @property
    def text(self) -> str:
        return " ".join((self.verb,) + self.args)


def _parse_step(line_no: int, words: List[str]) -> Step:
    verb, args = words[0], tuple(words[1:])
    if verb not in STEP_VERBS:
        raise ScriptError(f"未知步骤: {verb}", line_no)
    if verb == "repeat":
        if len(args) < 2 or not args[0].isdigit():
            raise ScriptError("repeat 应形如 repeat N STEP...", line_no)
        _parse_step(line_no, list(args[1:]))
    if verb == "expect" and (not args or args[0] not in EXPECT_KINDS):
        raise ScriptError(f"未知断言: {' '.join(args)}", line_no)
    return Step(line_no, verb, args)


def parse_script(text: str) -> List[Step]:
    """
    解析场景脚本：每行一个步骤，# 开头为注释

    Raises:
        ScriptError: 语法错误，附带行号
    """
    steps = []
    for line_no, line in enumerate(text.splitlines(), start=1):
        content = line.split("#", 1)[0].strip()
        if content:
            steps.append(_parse_step(line_no, content.split()))
    return steps


@dataclass
class ScenarioResult:
    transcript: List[dict] = field(default_factory=list)
    failures: List[str] = field(default_factory=list)

    @property
    def exit_status(self) -> int:
        return 1 if self.failures else 0

    def to_lines(self) -> str:
        return "".join(json.dumps(record, sort_keys=True) + "\n" for record in self.transcript)

    def count(self, event: str, **fields) -> int:
        return sum(1 for record in self.transcript if record["event"] == event
                   and all(record.get(k) == v for k, v in fields.items()))


class ScenarioRunner:
    """在运行中的网络上确定性地执行场景脚本"""

    def __init__(self, network: Network, script_dir: str = "."):
        self.network = network
        self.script_dir = script_dir
        self.result = ScenarioResult()
        self._receipt_cursor = 0
        self._sessions: Dict[Tuple[str, str], List[int]] = {}
        self._session_states: Dict[int, str] = {}
        self._step = 0

    # ------------------------------------------------------------ 记录

    def _record(self, event: str, **fields) -> dict:
        record = {"step": self._step, "event": event}
        record.update(fields)
        self.result.transcript.append(record)
        return record

    def _record_receipts(self) -> None:
        ledger = self.network.ledger
        receipts = ledger.receipts()
        for receipt in receipts[self._receipt_cursor:]:
            fields = {"function": ledger.function_key(receipt), "gas": receipt.gas_charged,
                      "status": receipt.status, "sender": self.network.node_name(receipt.sender)}
            if receipt.revert_reason:
                fields["reason"] = receipt.revert_reason
            self._record("gas", **fields)
        self._receipt_cursor = len(receipts)

    def _record_sessions(self) -> None:
        for session_id in sorted(self._session_states):
            if self._session_states[session_id] != SessionState.OPEN.value:
                continue
            session = self.network.ledger.call(self.network.oracle_address, "getSession", session_id)
            if session.state != SessionState.OPEN:
                self._session_states[session_id] = session.state.value
                self._record("session", session=session_id, state=session.state.value,
                             responses=len(session.responses),
                             missing=[self.network.node_name(n) for n in session.missing_responders()])

    # ------------------------------------------------------------ 执行

    def run(self, steps: List[Step]) -> ScenarioResult:
        """
        执行全部步骤；断言失败不会中止执行

        Returns:
            记录与失败列表
        """
        self._step = 0
        self._record_receipts()
        for step in steps:
            self._step = step.line
            self._run_step(step)
        logger.info(f"场景执行完成: {len(steps)} 个步骤, {len(self.result.failures)} 个断言失败")
        return self.result

    def _run_step(self, step: Step) -> None:
        try:
            getattr(self, f"_do_{step.verb}")(*step.args)
        except (ReGovError, ValueError, TypeError) as e:
            self._record("error", error=type(e).__name__, message=str(e), command=step.text)
            logger.warning(f"第 {step.line} 步出错: {e}")
            if step.verb == "expect":
                self._fail(f"断言无法执行: {step.text}")
        self._record_receipts()
        self._record_sessions()

    def _fail(self, message: str) -> None:
        self.result.failures.append(f"第 {self._step} 步: {message}")
        self._record("expect_failed", message=message)
        logger.warning(f"断言失败 (第 {self._step} 步): {message}")

    def _resource(self, ref: str) -> Tuple[str, str, int]:
        owner, path = split_resource(ref)
        return owner, path, self.network.resource_id(owner, path)

    # ------------------------------------------------------------ 步骤

    def _do_fetch(self, consumer: str, ref: str) -> None:
        owner, path = split_resource(ref)
        response = self.network.node(consumer).fetch(self.network.node(owner), path)
        if response.granted:
            self._record("fetch", consumer=consumer, owner=owner, path=path, resource=response.resource_id)
        else:
            self._record("fetch_denied", consumer=consumer, owner=owner, path=path, reason=response.reason.value)

    def _do_open(self, consumer: str, app_id: str, ref: str) -> None:
        _, _, resource_id = self._resource(ref)
        decision = self.network.node(consumer).open(app_id, resource_id)
        if decision.granted:
            self._record("grant", consumer=consumer, app=app_id, resource=resource_id,
                         remaining=decision.remaining)
            if decision.deleted:
                self._record("deleted_exhausted", node=consumer, resource=resource_id)
        else:
            self._record("denial", consumer=consumer, app=app_id, resource=resource_id,
                         rule=decision.denied_rule.value)

    def _do_advance_clock(self, duration: str) -> None:
        now = self.network.clock.advance(parse_duration(duration))
        self._record("clock", now=now)

    def _do_sweep(self, node_name: str) -> None:
        deleted = self.network.node(node_name).enclave.enforce_temporal_sweep()
        self._record("sweep", node=node_name, deleted=deleted)
        for resource_id in deleted:
            self._record("deleted_expired", node=node_name, resource=resource_id)

    def _do_monitor(self, owner_name: str, ref: str) -> None:
        owner, path, resource_id = self._resource(ref)
        datastore = self.network.node(owner_name).datastore
        session_id = datastore.monitor(resource_id)
        self._sessions.setdefault((owner, path), []).append(session_id)
        self._session_states[session_id] = SessionState.OPEN.value
        responders = [self.network.node_name(n) for n in datastore.config.retrievers.get(resource_id, [])]
        self._record("monitor", owner=owner_name, resource=resource_id, session=session_id,
                     responders=responders)

    def _do_set_rule(self, owner_name: str, scope: str, rule_text: str) -> None:
        rule = rule_from_text(rule_text)
        self.network.node(owner_name).datastore.set_rule(scope, rule)
        self._record("set_rule", owner=owner_name, scope=scope, rule=rule.rule_type.value, value=rule.value)

    def _do_remove_rule(self, owner_name: str, scope: str, rule_name: str) -> None:
        rule_type = RuleType.from_name(rule_name)
        self.network.node(owner_name).datastore.remove_rule(scope, rule_type)
        self._record("remove_rule", owner=owner_name, scope=scope, rule=rule_type.value)

    def _do_upload(self, owner_name: str, path: str, policy_file: str, *text: str) -> None:
        policy = UsagePolicy()
        if policy_file != "-":
            full_path = policy_file if os.path.isabs(policy_file) else os.path.join(self.script_dir, policy_file)
            with open(full_path, "rb") as f:
                policy = parse_policy(f.read())
        payload = " ".join(text).encode("utf-8")
        resource_id = self.network.node(owner_name).datastore.upload_resource(path, payload, policy)
        self._record("upload", owner=owner_name, path=path, resource=resource_id)

    def _do_move_node(self, node_name: str, country: str) -> None:
        self.network.node(node_name).location.move(int(country))
        self._record("move", node=node_name, country=int(country))

    def _provider(self, node_name: str, provider: str, available: bool) -> None:
        node = self.network.node(node_name)
        if provider == "enclave":
            node.enclave.set_available(available)
        elif provider == "clock":
            self.network.clock.available = available
        elif provider == "geo":
            node.location.available = available
        else:
            raise ValueError(f"未知的提供者: {provider}，可选 {', '.join(PROVIDERS)}")
        self._record("provider", node=node_name, provider=provider, available=available)

    def _do_fail(self, node_name: str, provider: str) -> None:
        self._provider(node_name, provider, False)

    def _do_recover(self, node_name: str, provider: str) -> None:
        self._provider(node_name, provider, True)

    def _do_tick(self, blocks: str = "1") -> None:
        self.network.run_blocks(int(blocks))
        self._record("tick", blocks=int(blocks), height=self.network.ledger.height)

    def _do_repeat(self, count: str, verb: str, *args: str) -> None:
        inner = Step(self._step, verb, args)
        for _ in range(int(count)):
            self._run_step(inner)

    # ------------------------------------------------------------ 断言

    def _do_expect(self, kind: str, *args: str) -> None:
        getattr(self, f"_expect_{kind}")(*args)

    def _expect_remaining(self, consumer: str, ref: str, expected: str) -> None:
        _, _, resource_id = self._resource(ref)
        actual = self.network.node(consumer).enclave.remaining_accesses(resource_id)
        shown = "none" if actual is None else "unlimited" if actual == UNLIMITED else str(actual)
        if shown != expected:
            self._fail(f"{consumer} 对资源 {resource_id} 的剩余次数为 {shown}，期望 {expected}")

    def _expect_held(self, consumer: str, ref: str, expected: str) -> None:
        _, _, resource_id = self._resource(ref)
        held = self.network.node(consumer).enclave.holds(resource_id)
        if held != (expected == "yes"):
            self._fail(f"{consumer} {'持有' if held else '未持有'}资源 {resource_id}，期望 {expected}")

    def _expect_grants(self, expected: str, consumer: Optional[str] = None) -> None:
        fields = {"consumer": consumer} if consumer else {}
        actual = self.result.count("grant", **fields)
        if actual != int(expected):
            self._fail(f"授权次数为 {actual}，期望 {expected}")

    def _expect_denials(self, expected: str, rule: Optional[str] = None) -> None:
        fields = {"rule": rule} if rule else {}
        actual = self.result.count("denial", **fields)
        if actual != int(expected):
            self._fail(f"拒绝次数为 {actual}，期望 {expected}")

    def _expect_last(self, event: str, *pairs: str) -> None:
        records = [r for r in self.result.transcript if r["event"] not in _BOOKKEEPING]
        last = records[-1] if records else {"event": None}
        expected = dict(pair.split("=", 1) for pair in pairs)
        if last["event"] != event or any(str(last.get(k)) != v for k, v in expected.items()):
            self._fail(f"最后的记录为 {json.dumps(last, sort_keys=True)}，期望 {event} {' '.join(pairs)}")

    def _latest_session(self, ref: str) -> int:
        owner, path = split_resource(ref)
        sessions = self._sessions.get((owner, path))
        if not sessions:
            raise SimulationError(f"资源 {ref} 尚未发起监控")
        return sessions[-1]

    def _expect_session(self, ref: str, state: str, *pairs: str) -> None:
        session_id = self._latest_session(ref)
        session = self.network.ledger.call(self.network.oracle_address, "getSession", session_id)
        expected = dict(pair.split("=", 1) for pair in pairs)
        if session.state.value != state:
            self._fail(f"监控会话 {session_id} 状态为 {session.state.value}，期望 {state}")
        if "responses" in expected and len(session.responses) != int(expected["responses"]):
            self._fail(f"监控会话 {session_id} 收到 {len(session.responses)} 份证据，期望 {expected['responses']}")

    def _expect_report(self, ref: str, *pairs: str) -> None:
        report = compliance_report(self.network, self._latest_session(ref))
        expected = dict(pair.split("=", 1) for pair in pairs)
        if "violations" in expected and len(report.violations) != int(expected["violations"]):
            self._fail(f"合规报告有 {len(report.violations)} 项违规，期望 {expected['violations']}")
        if "missing" in expected:
            missing = ",".join(report.non_responders) or "none"
            if missing != expected["missing"]:
                self._fail(f"未回应的节点为 {missing}，期望 {expected['missing']}")

    def _expect_gas(self, expected: str) -> None:
        actual = self.network.ledger.total_gas()
        if actual != int(expected):
            self._fail(f"Gas 总计为 {actual}，期望 {expected}")


def run_scenario(network: Network, script_path: str) -> ScenarioResult:
    """读取脚本文件并在网络上执行"""
    if not os.path.exists(script_path):
        raise ScriptError(f"脚本文件不存在: {script_path}")
    with open(script_path, "r", encoding="utf-8") as f:
        steps = parse_script(f.read())
    runner = ScenarioRunner(network, os.path.dirname(os.path.abspath(script_path)))
    return runner.run(steps)
