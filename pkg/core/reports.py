#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
报告模块

链下评估监控证据：按链上策略重放使用日志、标记违规、列出未回应的节点；
另外生成 Gas 报告和日志导出
"""

from dataclasses import dataclass, field
from typing import Callable, List, Optional

from loguru import logger

from core.contracts import SessionState
from core.enclave import UNLIMITED
from core.errors import SessionNotFinished
from core.ledger import Ledger
from core.policy import RuleType, UsagePolicy, country_in_region
from core.usage_log import LogAction, UsageLog, parse_detail


@dataclass(frozen=True)
class Violation:
    resource_id: int
    timestamp: int
    rule: str
    detail: str

    def to_dict(self) -> dict:
        return {"resourceId": self.resource_id, "timestamp": self.timestamp,
                "rule": self.rule, "detail": self.detail}


@dataclass
class ReplayResult:
    resource_id: int
    grants: int = 0
    denials: int = 0
    present: bool = False
    remaining: int = UNLIMITED
    violations: List[Violation] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "resourceId": self.resource_id,
            "grants": self.grants,
            "denials": self.denials,
            "present": self.present,
            "remaining": self.remaining,
            "violations": [v.to_dict() for v in self.violations],
        }


def replay_usage_log(log: UsageLog, policy: UsagePolicy) -> ReplayResult:
    """
    用参考模型重放使用日志

    Args:
        log: 单个资源的使用日志
        policy: 用于判定的策略

    Returns:
        重放得到的最终状态及违规列表
    """
    result = ReplayResult(log.resource_id)
    retrieved_at = 0
    grants_since_fetch = 0
    # 超期后的首个条目，若紧跟 deleted_expired 则属于按时清理
    overdue = None
    retention_flagged = False

    def flag(entry, rule: RuleType, detail: str) -> None:
        result.violations.append(Violation(entry.resource_id, entry.timestamp, rule.value, detail))

    def age(entry) -> int:
        return entry.timestamp - retrieved_at

    def overdue_retention(entry) -> bool:
        return (result.present and policy.temporal is not None
                and age(entry) > policy.temporal.max_retention)

    for entry in log.entries:
        if overdue is not None:
            if entry.action != LogAction.DELETED_EXPIRED:
                flag(overdue, RuleType.TEMPORAL, f"超过保留期限 {age(overdue)} 秒后仍未删除")
                retention_flagged = True
            overdue = None

        if entry.action == LogAction.RETRIEVED:
            result.present = True
            retrieved_at = entry.timestamp
            grants_since_fetch = 0
            retention_flagged = False
            counter = policy.access_counter
            result.remaining = counter.max_accesses if counter else UNLIMITED

        elif entry.action == LogAction.ACCESS_GRANTED:
            result.grants += 1
            grants_since_fetch += 1
            fields = parse_detail(entry.detail)

            if not result.present:
                flag(entry, RuleType.ACCESS_COUNTER, "访问了已删除的资源")
            elif policy.access_counter and grants_since_fetch > policy.access_counter.max_accesses:
                flag(entry, RuleType.ACCESS_COUNTER,
                     f"第 {grants_since_fetch} 次访问超过上限 {policy.access_counter.max_accesses}")
            if policy.temporal and age(entry) > policy.temporal.max_retention:
                flag(entry, RuleType.TEMPORAL, f"保留 {age(entry)} 秒后仍被访问")
                retention_flagged = True
            if policy.domain and fields.get("domain") != str(policy.domain.domain_code):
                flag(entry, RuleType.DOMAIN, f"领域 {fields.get('domain')} 不符合要求")
            if policy.geographical:
                country = fields.get("country", "")
                if not country.isdigit() or not country_in_region(int(country),
                                                                  policy.geographical.region_code):
                    flag(entry, RuleType.GEOGRAPHICAL, f"国家 {country or '未知'} 不在允许地区")
            if result.remaining > 0:
                result.remaining -= 1

        elif entry.action in (LogAction.DELETED_EXHAUSTED, LogAction.DELETED_EXPIRED):
            result.present = False

        else:
            if entry.action == LogAction.ACCESS_DENIED:
                result.denials += 1
            if not retention_flagged and overdue_retention(entry):
                overdue = entry

    if overdue is not None:
        flag(overdue, RuleType.TEMPORAL, f"超过保留期限 {age(overdue)} 秒后仍未删除")

    return result


# ---------------------------------------------------------------- 合规报告

@dataclass
class ResponderReport:
    name: str
    node_id: str
    results: List[ReplayResult] = field(default_factory=list)

    @property
    def violations(self) -> List[Violation]:
        return [v for result in self.results for v in result.violations]

    def to_dict(self) -> dict:
        return {"name": self.name, "nodeId": self.node_id,
                "results": [r.to_dict() for r in self.results]}


@dataclass
class ComplianceReport:
    session_id: int
    state: str
    resource_ids: List[int]
    responders: List[ResponderReport] = field(default_factory=list)
    non_responders: List[str] = field(default_factory=list)

    @property
    def violations(self) -> List[Violation]:
        return [v for responder in self.responders for v in responder.violations]

    def to_dict(self) -> dict:
        return {
            "session": self.session_id,
            "state": self.state,
            "resourceIds": self.resource_ids,
            "responders": [r.to_dict() for r in self.responders],
            "nonResponders": self.non_responders,
            "violations": len(self.violations),
        }

    def to_text(self) -> str:
        lines = [f"监控会话 {self.session_id}: {self.state}, 资源 {self.resource_ids}"]
        for responder in self.responders:
            lines.append(f"  {responder.name}: {len(responder.violations)} 项违规")
            for result in responder.results:
                lines.append(f"    资源 {result.resource_id}: 授权 {result.grants} 次, 拒绝 {result.denials} 次, "
                             f"{'仍持有' if result.present else '已删除'}")
                for violation in result.violations:
                    lines.append(f"      [{violation.rule}] t={violation.timestamp} {violation.detail}")
        for name in self.non_responders:
            lines.append(f"  {name}: 未回应")
        return "\n".join(lines)


def build_compliance_report(ledger: Ledger, oracle_address: str, session_id: int,
                            name_of: Optional[Callable[[str], str]] = None) -> ComplianceReport:
    """
    按链上策略评估会话收集的证据

    Args:
        ledger: 账本
        oracle_address: PullInOracle 合约地址
        session_id: 会话编号
        name_of: 把节点公钥映射为显示名称

    Returns:
        合规报告

    Raises:
        SessionNotFinished: 会话仍在进行
    """
    name_of = name_of or (lambda node_id: node_id[:16])
    session = ledger.call(oracle_address, "getSession", session_id)
    if session.state == SessionState.OPEN:
        raise SessionNotFinished(f"监控会话 {session_id} 尚未结束")

    report = ComplianceReport(session_id, session.state.value, list(session.resource_ids))
    for node_id in sorted(session.responses):
        responder = ResponderReport(name_of(node_id), node_id)
        for log in UsageLog.from_lines(session.responses[node_id]):
            rules = ledger.call(session.initiator, "getObligationRules", log.resource_id)
            responder.results.append(replay_usage_log(log, rules.to_policy()))
        report.responders.append(responder)
    report.non_responders = [name_of(node_id) for node_id in session.expected_responders
                             if node_id not in session.responses]

    logger.info(f"合规报告: 会话 {session_id}, {len(report.violations)} 项违规, "
                f"{len(report.non_responders)} 个节点未回应")
    return report


def compliance_report(network, session_id: int) -> ComplianceReport:
    return build_compliance_report(network.ledger, network.oracle_address, session_id, network.node_name)


# ---------------------------------------------------------------- 其他报告

def gas_report(ledger: Ledger) -> str:
    """按函数汇总的 Gas 表"""
    totals = ledger.gas_by_function()
    width = max([len(key) for key in totals] + [8])
    lines = [f"{'function':<{width}}  {'gas':>12}"]
    for key in sorted(totals):
        lines.append(f"{key:<{width}}  {totals[key]:>12}")
    lines.append(f"{'total':<{width}}  {ledger.total_gas():>12}")
    return "\n".join(lines)


def log_dump(network, node_name: str, owner: str, relative_path: str) -> str:
    """导出节点飞地中某资源的使用日志（不记录监控请求）"""
    resource_id = network.resource_id(owner, relative_path)
    return network.node(node_name).enclave.inspect_usage_log(resource_id).to_lines()
