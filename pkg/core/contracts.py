#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
治理合约模块

三个托管在账本上的状态机：
DTindexing（资源索引）、DTobligations（每个数据存储一份的策略存储与监控发起方）、
PullInOracle（拉取式预言机的监控会话聚合）
"""

from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Dict, List, Optional

from loguru import logger

from core.errors import ContractRevert, PolicyError
from core.ledger import Contract, ExecutionContext, contract_function
from core.policy import RuleType, UsagePolicy, make_rule, validate_rule

DEFAULT_SESSION_DEADLINE = 10


class PodType(str, Enum):
    MEDICAL = "medical"
    SOCIAL = "social"
    FINANCIAL = "financial"


class SessionState(str, Enum):
    OPEN = "open"
    COMPLETE = "complete"
    TIMED_OUT = "timed_out"


@dataclass
class PodRecord:
    id: int
    owner: str
    base_url: str
    is_active: bool
    pod_type: str
    obligations_address: str


@dataclass
class ResourceRecord:
    id: int
    owner: str
    pod_id: int
    url: str
    is_active: bool


@dataclass
class ObligationRules:
    """与 UsagePolicy 一一对应的链上规则结构"""

    access_counter: Optional[int] = None
    temporal: Optional[int] = None
    country: Optional[int] = None
    domain: Optional[int] = None

    _FIELDS = {
        RuleType.ACCESS_COUNTER: "access_counter",
        RuleType.TEMPORAL: "temporal",
        RuleType.GEOGRAPHICAL: "country",
        RuleType.DOMAIN: "domain",
    }

    def get(self, rule_type: RuleType) -> Optional[int]:
        return getattr(self, self._FIELDS[rule_type])

    def with_value(self, rule_type: RuleType, value: Optional[int]) -> "ObligationRules":
        return replace(self, **{self._FIELDS[rule_type]: value})

    def is_empty(self) -> bool:
        return all(self.get(rule_type) is None for rule_type in RuleType)

    def to_policy(self) -> UsagePolicy:
        policy = UsagePolicy()
        for rule_type in RuleType:
            value = self.get(rule_type)
            if value is not None:
                policy = policy.with_rule(make_rule(rule_type, value))
        return policy

    @classmethod
    def from_policy(cls, policy: UsagePolicy) -> "ObligationRules":
        rules = cls()
        for rule in policy.rules():
            rules = rules.with_value(rule.rule_type, rule.value)
        return rules


@dataclass
class MonitoringSession:
    session_id: int
    resource_ids: List[int]
    initiator: str
    expected_responders: List[str]
    opened_at: int
    deadline: int
    responses: Dict[str, str] = field(default_factory=dict)
    state: SessionState = SessionState.OPEN

    def effective_state(self, block_index: int) -> SessionState:
        if self.state == SessionState.OPEN and block_index >= self.opened_at + self.deadline:
            return SessionState.TIMED_OUT
        return self.state

    def missing_responders(self) -> List[str]:
        return [r for r in self.expected_responders if r not in self.responses]


def _revert(reason: str):
    raise ContractRevert(reason)


# ---------------------------------------------------------------- DTindexing

class DTindexing(Contract):
    """资源索引：登记数据存储与资源元数据，提供检索"""

    KIND = "DTindexing"

    def __init__(self, address: str, ctx: ExecutionContext, oracle_address: str = "",
                 dt_subscription: int = 0):
        super().__init__(address)
        self.pods_counter = 0
        self.resource_counter = 0
        # 订阅逻辑属于市场，不在本系统范围内，只保存该值
        self.dt_subscription = dt_subscription
        self.oracle_address = oracle_address
        self.pod_list: List[PodRecord] = []
        self.resource_list: List[ResourceRecord] = []

    def _valid_pod_id(self, ctx: ExecutionContext, pod_id: int) -> PodRecord:
        """validPodId：数据存储存在、处于激活状态且归调用者所有"""
        if not isinstance(pod_id, int) or not 1 <= pod_id <= self.pods_counter:
            _revert("validPodId")
        pod = self.pod_list[pod_id - 1]
        if not pod.is_active or pod.owner != ctx.sender:
            _revert("validPodId")
        return pod

    def _resource(self, resource_id: int) -> ResourceRecord:
        if not isinstance(resource_id, int) or not 1 <= resource_id <= self.resource_counter:
            _revert("UnknownId")
        return self.resource_list[resource_id - 1]

    def _pod(self, pod_id: int) -> PodRecord:
        if not isinstance(pod_id, int) or not 1 <= pod_id <= self.pods_counter:
            _revert("UnknownId")
        return self.pod_list[pod_id - 1]

    @staticmethod
    def _subscription_active(subscription_id: int) -> bool:
        return True

    @contract_function("registerPod")
    def register_pod(self, ctx: ExecutionContext, new_reference: str, pod_type: str,
                     pod_address: str) -> int:
        if not new_reference:
            _revert("emptyReference")
        if pod_type not in {t.value for t in PodType}:
            _revert("unknownPodType")
        if pod_address != ctx.sender:
            _revert("senderNotPodOwner")

        self.pods_counter += 1
        pod_id = self.pods_counter
        obligations = ctx.deploy("DTobligations", self.address, pod_address, pod_id, self.oracle_address)
        self.pod_list.append(PodRecord(pod_id, pod_address, new_reference, True, pod_type, obligations))
        ctx.emit("NewPod", idPod=pod_id, obligationAddress=obligations)
        logger.info(f"数据存储 {pod_id} 已登记: {new_reference} ({pod_type})")
        return pod_id

    @contract_function("registerResource")
    def register_resource(self, ctx: ExecutionContext, pod_id: int, new_reference: str,
                          subscription_id: int = 0) -> int:
        pod = self._valid_pod_id(ctx, pod_id)
        if not new_reference:
            _revert("emptyReference")
        self.resource_counter += 1
        resource_id = self.resource_counter
        self.resource_list.append(ResourceRecord(resource_id, pod.owner, pod.id, new_reference, True))
        ctx.emit("NewResource", idResource=resource_id, idPod=pod.id)
        logger.info(f"资源 {resource_id} 已登记: {new_reference}")
        return resource_id

    @contract_function("deactivateResource")
    def deactivate_resource(self, ctx: ExecutionContext, resource_id: int) -> ResourceRecord:
        if not isinstance(resource_id, int) or not 1 <= resource_id <= self.resource_counter:
            _revert("validResourceId")
        resource = self.resource_list[resource_id - 1]
        if not resource.is_active:
            _revert("validResourceId")
        if resource.owner != ctx.sender:
            _revert("NotOwner")
        resource.is_active = False
        return replace(resource)

    @contract_function("deactivatePod")
    def deactivate_pod(self, ctx: ExecutionContext, pod_id: int) -> PodRecord:
        if not isinstance(pod_id, int) or not 1 <= pod_id <= self.pods_counter:
            _revert("validPodId")
        pod = self.pod_list[pod_id - 1]
        if not pod.is_active:
            _revert("validPodId")
        if pod.owner != ctx.sender:
            _revert("NotOwner")
        pod.is_active = False
        return replace(pod)

    @contract_function("getPodResources", read_only=True)
    def get_pod_resources(self, ctx: ExecutionContext, pod_id: int,
                          subscription_id: int = 0) -> List[ResourceRecord]:
        pod = self._pod(pod_id)
        if not pod.is_active or not self._subscription_active(subscription_id):
            return []
        return [replace(r) for r in self.resource_list if r.pod_id == pod_id and r.is_active]

    @contract_function("getResource", read_only=True)
    def get_resource(self, ctx: ExecutionContext, resource_id: int) -> ResourceRecord:
        return replace(self._resource(resource_id))

    @contract_function("getPod", read_only=True)
    def get_pod(self, ctx: ExecutionContext, pod_id: int) -> PodRecord:
        return replace(self._pod(pod_id))

    def search_pods_by_type(self, pod_type: PodType, subscription_id: int = 0) -> List[PodRecord]:
        if not self._subscription_active(subscription_id):
            return []
        return [replace(p) for p in self.pod_list if p.pod_type == pod_type.value and p.is_active]

    @contract_function("getMedicalPods", read_only=True)
    def get_medical_pods(self, ctx: ExecutionContext, subscription_id: int = 0) -> List[PodRecord]:
        return self.search_pods_by_type(PodType.MEDICAL, subscription_id)

    @contract_function("getSocialPods", read_only=True)
    def get_social_pods(self, ctx: ExecutionContext, subscription_id: int = 0) -> List[PodRecord]:
        return self.search_pods_by_type(PodType.SOCIAL, subscription_id)

    @contract_function("getFinancialPods", read_only=True)
    def get_financial_pods(self, ctx: ExecutionContext, subscription_id: int = 0) -> List[PodRecord]:
        return self.search_pods_by_type(PodType.FINANCIAL, subscription_id)


# ---------------------------------------------------------------- DTobligations

class DTobligations(Contract):
    """单个数据存储的策略存储；只有所有者可以修改规则和发起监控"""

    KIND = "DTobligations"

    def __init__(self, address: str, ctx: ExecutionContext, dt_indexing: str, pod_owner: str,
                 pod_id: int, oracle: str = ""):
        super().__init__(address)
        self.owner = pod_owner
        self.dt_indexing = dt_indexing
        self.pod_id = pod_id
        self.oracle = oracle
        self.default_rules = ObligationRules()
        self.resource_rules: Dict[int, ObligationRules] = {}
        self.sessions: List[int] = []
        self.evidence: Dict[int, dict] = {}

    # ------------------------------------------------------------ modifiers

    def _only_owner(self, ctx: ExecutionContext) -> None:
        if ctx.sender != self.owner:
            _revert("onlyOwner")

    def _covered(self, ctx: ExecutionContext, resource_id: int) -> None:
        """isTheResourceCovered：资源登记在本数据存储名下"""
        try:
            record = ctx.read(self.dt_indexing, "getResource", resource_id)
        except ContractRevert:
            _revert("isTheResourceCovered")
        if record.pod_id != self.pod_id:
            _revert("isTheResourceCovered")

    def _has_specific_rules(self, resource_id: int) -> None:
        if not self._with_specific_rules(resource_id):
            _revert("hasSpecificRules")

    @staticmethod
    def _check_rule(rule_type: RuleType, value: int) -> None:
        if rule_type == RuleType.TEMPORAL and (not isinstance(value, int) or value <= 0):
            _revert("isValidTemporal")
        try:
            validate_rule(make_rule(rule_type, value))
        except PolicyError as e:
            _revert(type(e).__name__)

    def _with_specific_rules(self, resource_id: int) -> bool:
        rules = self.resource_rules.get(resource_id)
        return rules is not None and not rules.is_empty()

    # ------------------------------------------------------------ 通用实现

    def _add_default(self, ctx: ExecutionContext, rule_type: RuleType, value: int) -> ObligationRules:
        self._only_owner(ctx)
        self._check_rule(rule_type, value)
        self.default_rules = self.default_rules.with_value(rule_type, value)
        return replace(self.default_rules)

    def _add_specific(self, ctx: ExecutionContext, resource_id: int, rule_type: RuleType,
                      value: int) -> ObligationRules:
        self._only_owner(ctx)
        self._covered(ctx, resource_id)
        self._check_rule(rule_type, value)
        rules = self.resource_rules.get(resource_id, ObligationRules()).with_value(rule_type, value)
        self.resource_rules[resource_id] = rules
        return replace(rules)

    def _remove_default(self, ctx: ExecutionContext, rule_type: RuleType) -> None:
        self._only_owner(ctx)
        if self.default_rules.get(rule_type) is None:
            _revert("NoSuchRule")
        self.default_rules = self.default_rules.with_value(rule_type, None)

    def _remove_specific(self, ctx: ExecutionContext, resource_id: int, rule_type: RuleType) -> None:
        self._only_owner(ctx)
        self._covered(ctx, resource_id)
        self._has_specific_rules(resource_id)
        rules = self.resource_rules[resource_id]
        if rules.get(rule_type) is None:
            _revert("NoSuchRule")
        rules = rules.with_value(rule_type, None)
        if rules.is_empty():
            del self.resource_rules[resource_id]
        else:
            self.resource_rules[resource_id] = rules

    # ------------------------------------------------------------ 默认规则

    @contract_function("addDefaultAccessCounterObligation")
    def add_default_access_counter(self, ctx, access_counter: int) -> ObligationRules:
        return self._add_default(ctx, RuleType.ACCESS_COUNTER, access_counter)

    @contract_function("addDefaultTemporalObligation")
    def add_default_temporal(self, ctx, temporal: int) -> ObligationRules:
        return self._add_default(ctx, RuleType.TEMPORAL, temporal)

    @contract_function("addDefaultCountryObligation")
    def add_default_country(self, ctx, country: int) -> ObligationRules:
        return self._add_default(ctx, RuleType.GEOGRAPHICAL, country)

    @contract_function("addDefaultDomainObligation")
    def add_default_domain(self, ctx, domain: int) -> ObligationRules:
        return self._add_default(ctx, RuleType.DOMAIN, domain)

    @contract_function("removeDefaultAccessCounterObligation")
    def remove_default_access_counter(self, ctx) -> None:
        self._remove_default(ctx, RuleType.ACCESS_COUNTER)

    @contract_function("removeDefaultTemporalObligation")
    def remove_default_temporal(self, ctx) -> None:
        self._remove_default(ctx, RuleType.TEMPORAL)

    @contract_function("removeDefaultCountryObligation")
    def remove_default_country(self, ctx) -> None:
        self._remove_default(ctx, RuleType.GEOGRAPHICAL)

    @contract_function("removeDefaultDomainObligation")
    def remove_default_domain(self, ctx) -> None:
        self._remove_default(ctx, RuleType.DOMAIN)

    # ------------------------------------------------------------ 资源专属规则

    @contract_function("addAccessCounterObligation")
    def add_access_counter(self, ctx, resource_id: int, access_counter: int) -> ObligationRules:
        return self._add_specific(ctx, resource_id, RuleType.ACCESS_COUNTER, access_counter)

    @contract_function("addTemporalObligation")
    def add_temporal(self, ctx, resource_id: int, deadline: int) -> ObligationRules:
        return self._add_specific(ctx, resource_id, RuleType.TEMPORAL, deadline)

    @contract_function("addCountryObligation")
    def add_country(self, ctx, resource_id: int, country: int) -> ObligationRules:
        return self._add_specific(ctx, resource_id, RuleType.GEOGRAPHICAL, country)

    @contract_function("addDomainObligation")
    def add_domain(self, ctx, resource_id: int, domain: int) -> ObligationRules:
        return self._add_specific(ctx, resource_id, RuleType.DOMAIN, domain)

    @contract_function("removeAccessCounterObligation")
    def remove_access_counter(self, ctx, resource_id: int) -> None:
        self._remove_specific(ctx, resource_id, RuleType.ACCESS_COUNTER)

    @contract_function("removeTemporalObligation")
    def remove_temporal(self, ctx, resource_id: int) -> None:
        self._remove_specific(ctx, resource_id, RuleType.TEMPORAL)

    @contract_function("removeCountryObligation")
    def remove_country(self, ctx, resource_id: int) -> None:
        self._remove_specific(ctx, resource_id, RuleType.GEOGRAPHICAL)

    @contract_function("removeDomainObligation")
    def remove_domain(self, ctx, resource_id: int) -> None:
        self._remove_specific(ctx, resource_id, RuleType.DOMAIN)

    # ------------------------------------------------------------ 读取

    @contract_function("getObligationRules", read_only=True)
    def get_obligation_rules(self, ctx, resource_id: int) -> ObligationRules:
        self._covered(ctx, resource_id)
        if self._with_specific_rules(resource_id):
            return replace(self.resource_rules[resource_id])
        return replace(self.default_rules)

    @contract_function("getDefaultObligationRules", read_only=True)
    def get_default_obligation_rules(self, ctx) -> ObligationRules:
        return replace(self.default_rules)

    @contract_function("withSpecificRules", read_only=True)
    def with_specific_rules(self, ctx, resource_id: int) -> bool:
        return self._with_specific_rules(resource_id)

    @contract_function("getSessions", read_only=True)
    def get_sessions(self, ctx) -> List[int]:
        return list(self.sessions)

    @contract_function("getEvidence", read_only=True)
    def get_evidence(self, ctx, session_id: int) -> dict:
        if session_id not in self.evidence:
            _revert("evidencePending")
        return dict(self.evidence[session_id])

    # ------------------------------------------------------------ 监控

    @contract_function("monitorCompliance")
    def monitor_compliance(self, ctx, resource_ids: Optional[List[int]] = None,
                           responders: Optional[List[str]] = None) -> int:
        """发起监控：由拉取式预言机向持有资源的消费者节点收集使用日志"""
        self._only_owner(ctx)
        if not self.oracle:
            _revert("noOracle")
        if resource_ids:
            for resource_id in resource_ids:
                self._covered(ctx, resource_id)
        else:
            records = ctx.read(self.dt_indexing, "getPodResources", self.pod_id, 0)
            resource_ids = [record.id for record in records]
        session_id = ctx.call(self.oracle, "initializeMonitoring", list(resource_ids), list(responders or []))
        self.sessions.append(session_id)
        return session_id

    @contract_function("receiveEvidence")
    def receive_evidence(self, ctx, session_id: int, state: str, responses: Dict[str, str],
                         missing: List[str]) -> None:
        if ctx.sender != self.oracle:
            _revert("onlyOracle")
        self.evidence[session_id] = {"state": state, "responses": dict(responses), "missing": list(missing)}


# ---------------------------------------------------------------- PullInOracle

class PullInOracle(Contract):
    """拉取式预言机的链上部分：开启会话、聚合消费者回调、把证据交回发起合约"""

    KIND = "PullInOracle"

    def __init__(self, address: str, ctx: ExecutionContext,
                 session_deadline: int = DEFAULT_SESSION_DEADLINE):
        super().__init__(address)
        self.session_counter = 0
        self.session_deadline = session_deadline
        self.sessions: Dict[int, MonitoringSession] = {}

    def _session(self, session_id: int) -> MonitoringSession:
        session = self.sessions.get(session_id)
        if session is None:
            _revert("UnknownSession")
        return session

    def _surface(self, ctx: ExecutionContext, session: MonitoringSession) -> None:
        # 发起方是合约时把证据交回；外部账户直接调用时证据留在会话中
        if session.initiator.startswith("0x"):
            ctx.call(session.initiator, "receiveEvidence", session.session_id, session.state.value,
                     dict(session.responses), session.missing_responders())
        logger.info(f"监控会话 {session.session_id} 结束: {session.state.value}, "
                    f"{len(session.responses)}/{len(session.expected_responders)} 份证据")

    @contract_function("initializeMonitoring")
    def initialize_monitoring(self, ctx, resource_ids: List[int], responders: List[str]) -> int:
        self.session_counter += 1
        expected = list(dict.fromkeys(responders))
        session = MonitoringSession(
            session_id=self.session_counter,
            resource_ids=list(resource_ids),
            initiator=ctx.sender,
            expected_responders=expected,
            opened_at=ctx.block_index,
            deadline=self.session_deadline,
        )
        self.sessions[session.session_id] = session
        ctx.emit("NewMonitoring", sessionId=session.session_id, resourceIds=session.resource_ids,
                 initiator=session.initiator, responders=expected,
                 deadline=session.opened_at + session.deadline)
        if not expected:
            session.state = SessionState.COMPLETE
            self._surface(ctx, session)
        return session.session_id

    @contract_function("_callback")
    def callback(self, ctx, session_id: int, evidence: str) -> str:
        session = self._session(session_id)
        if session.effective_state(ctx.block_index) != SessionState.OPEN:
            _revert("SessionClosed")
        if ctx.sender not in session.expected_responders:
            _revert("UnexpectedResponder")
        if ctx.sender in session.responses:
            _revert("DuplicateResponse")

        session.responses[ctx.sender] = evidence
        if len(session.responses) == len(session.expected_responders):
            session.state = SessionState.COMPLETE
            self._surface(ctx, session)
        return session.state.value

    @contract_function("closeSession")
    def close_session(self, ctx, session_id: int) -> str:
        """截止后把会话定为超时，并交回已收集的部分证据"""
        session = self._session(session_id)
        if session.state != SessionState.OPEN:
            _revert("SessionClosed")
        if session.effective_state(ctx.block_index) != SessionState.TIMED_OUT:
            _revert("sessionNotExpired")
        session.state = SessionState.TIMED_OUT
        self._surface(ctx, session)
        return session.state.value

    @contract_function("getSession", read_only=True)
    def get_session(self, ctx, session_id: int) -> MonitoringSession:
        session = self._session(session_id)
        return replace(session, resource_ids=list(session.resource_ids),
                       expected_responders=list(session.expected_responders),
                       responses=dict(session.responses),
                       state=session.effective_state(ctx.block_index))

    @contract_function("getSessionCount", read_only=True)
    def get_session_count(self, ctx) -> int:
        return self.session_counter


CONTRACT_KINDS = {
    DTindexing.KIND: DTindexing,
    DTobligations.KIND: DTobligations,
    PullInOracle.KIND: PullInOracle,
}
