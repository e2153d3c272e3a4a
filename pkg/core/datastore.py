#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
个人在线数据存储模块

数据提供方：资源存储与元文件（DTconfig.json / DTobligations.json）、
数据请求处理流水线、资源上传登记以及定期监控
"""

import json
import os
import tempfile
import threading
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Dict, List, Optional, Union
from urllib.parse import parse_qsl, urlencode

from loguru import logger

from core.attestation import AttestationQuote, QuoteVerifier
from core.errors import (
    DuplicatePath, InvalidPolicy, LedgerUnavailable, NotOwnedHere, PolicyError, StorageExists,
    TransactionReverted,
)
from core.identity import NodeIdentity, recover_public_key
from core.oracle_bridge import OracleBridge
from core.policy import (
    RuleType, UsagePolicy, UsageRule, domain_code_for, effective_policy, make_rule, policy_from_dict,
    region_code_for, validate_rule,
)

CONFIG_FILE = "DTconfig.json"
OBLIGATIONS_FILE = "DTobligations.json"
STORAGE_DIR = "storage"
EVIDENCE_DIR = "evidence"

WIRE_FIELDS = ("url", "auth_token", "claim", "attestation")

# 规则类型 → (默认规则函数, 资源规则函数) 的后缀
_RULE_FUNCTIONS = {
    RuleType.ACCESS_COUNTER: "AccessCounterObligation",
    RuleType.TEMPORAL: "TemporalObligation",
    RuleType.GEOGRAPHICAL: "CountryObligation",
    RuleType.DOMAIN: "DomainObligation",
}


def _atomic_write(path: str, text: str) -> None:
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp_path = tempfile.mkstemp(dir=directory, prefix=".tmp-")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as f:
            f.write(text)
        os.replace(tmp_path, path)
    except Exception:
        if os.path.exists(tmp_path):
            os.remove(tmp_path)
        raise


def _read_json(path: str) -> dict:
    with open(path, "r", encoding="utf-8") as f:
        return json.load(f)


# ---------------------------------------------------------------- 请求与响应

class DenialReason(str, Enum):
    MALFORMED = "malformed"
    UNTRUSTED_ORIGIN = "untrusted_origin"
    AUTH_FAILED = "auth_failed"
    NOT_FOUND = "not_found"
    NO_RIGHTS = "no_rights"


@dataclass(frozen=True)
class DataRequest:
    """POST 请求体；缺失或无法解码的字段为 None"""

    url: Optional[str]
    auth_token: Optional[bytes]
    claim: Optional[bytes]
    attestation: Optional[AttestationQuote]
    method: str = "POST"

    def to_wire(self) -> str:
        values = {
            "url": self.url or "",
            "auth_token": (self.auth_token or b"").hex(),
            "claim": (self.claim or b"").hex(),
            "attestation": self.attestation.to_bytes().hex() if self.attestation else "",
        }
        return urlencode([(name, values[name]) for name in WIRE_FIELDS])

    @classmethod
    def from_wire(cls, body: str, method: str = "POST") -> "DataRequest":
        fields = dict(parse_qsl(body, keep_blank_values=True))

        def hex_field(name: str) -> Optional[bytes]:
            try:
                value = bytes.fromhex(fields.get(name, ""))
            except ValueError:
                return None
            return value or None

        attestation = None
        raw_quote = hex_field("attestation")
        if raw_quote is not None:
            try:
                attestation = AttestationQuote.from_bytes(raw_quote)
            except ValueError:
                attestation = None
        return cls(fields.get("url") or None, hex_field("auth_token"), hex_field("claim"),
                   attestation, method)


@dataclass(frozen=True)
class DataResponse:
    status: str
    reason: Optional[DenialReason] = None
    payload: Optional[bytes] = None
    policy: Optional[UsagePolicy] = None
    resource_id: Optional[int] = None

    @property
    def granted(self) -> bool:
        return self.status == "granted"

    @classmethod
    def grant(cls, payload: bytes, policy: UsagePolicy, resource_id: int) -> "DataResponse":
        return cls("granted", None, payload, policy, resource_id)

    @classmethod
    def deny(cls, reason: DenialReason) -> "DataResponse":
        return cls("denied", reason)


class AlwaysSubscribed:
    """默认的权限判定：市场订阅不在本系统范围内，一律视为已订阅"""

    def __call__(self, consumer_key: bytes, resource_id: int) -> bool:
        return True


RightsEvaluator = Callable[[bytes, int], bool]


# ---------------------------------------------------------------- 元文件

@dataclass
class ResourceEntry:
    relative_path: str
    resource_id: int
    registered_at: int

    def to_dict(self) -> dict:
        return {"relativePath": self.relative_path, "resourceId": self.resource_id,
                "registeredAt": self.registered_at}


@dataclass
class DatastoreConfig:
    """DTconfig.json 的内容"""

    datastore_id: int
    identity: NodeIdentity
    base_url: str
    pod_type: str
    obligations_address: str
    resources: List[ResourceEntry] = field(default_factory=list)
    retrievers: Dict[int, List[str]] = field(default_factory=dict)
    oracle_cursor: int = 0

    def to_dict(self) -> dict:
        return {
            "datastoreId": self.datastore_id,
            "publicKey": self.identity.node_id,
            "privateKey": self.identity.private_key_hex(),
            "baseUrl": self.base_url,
            "podType": self.pod_type,
            "obligationsAddress": self.obligations_address,
            "resources": [entry.to_dict() for entry in self.resources],
            "retrievers": {str(rid): sorted(keys) for rid, keys in sorted(self.retrievers.items())},
            "oracleCursor": self.oracle_cursor,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "DatastoreConfig":
        return cls(
            datastore_id=data["datastoreId"],
            identity=NodeIdentity.from_hex(data["publicKey"], data["privateKey"]),
            base_url=data["baseUrl"],
            pod_type=data["podType"],
            obligations_address=data["obligationsAddress"],
            resources=[ResourceEntry(r["relativePath"], r["resourceId"], r["registeredAt"])
                       for r in data.get("resources", [])],
            retrievers={int(rid): list(keys) for rid, keys in data.get("retrievers", {}).items()},
            oracle_cursor=data.get("oracleCursor", 0),
        )

    def entry_for_path(self, relative_path: str) -> Optional[ResourceEntry]:
        return next((e for e in self.resources if e.relative_path == relative_path), None)

    def entry_for_id(self, resource_id: int) -> Optional[ResourceEntry]:
        return next((e for e in self.resources if e.resource_id == resource_id), None)


class _ConfigCursorStore:
    """把预言机游标保存在 DTconfig.json 的 oracleCursor 中"""

    def __init__(self, datastore: "Datastore"):
        self._datastore = datastore

    def load(self) -> int:
        return self._datastore.config.oracle_cursor

    def save(self, value: int) -> None:
        if value != self._datastore.config.oracle_cursor:
            self._datastore.config.oracle_cursor = value
            self._datastore.save_config()


# ---------------------------------------------------------------- 数据存储

class Datastore:
    """个人在线数据存储"""

    def __init__(self, root: str, config: DatastoreConfig, bridge: OracleBridge,
                 indexing_address: str, verifier: QuoteVerifier,
                 rights: Optional[RightsEvaluator] = None):
        self.root = root
        self.config = config
        self.bridge = bridge
        self.indexing_address = indexing_address
        self.verifier = verifier
        self.rights = rights or AlwaysSubscribed()
        self.last_trace: List[str] = []
        self.pending_sessions: List[int] = []
        self._lock = threading.Lock()

    # ------------------------------------------------------------ 路径

    @property
    def config_path(self) -> str:
        return os.path.join(self.root, CONFIG_FILE)

    @property
    def obligations_path(self) -> str:
        return os.path.join(self.root, OBLIGATIONS_FILE)

    def storage_path(self, relative_path: str) -> str:
        return os.path.join(self.root, STORAGE_DIR, *relative_path.strip("/").split("/"))

    def evidence_path(self, session_id: int) -> str:
        return os.path.join(self.root, EVIDENCE_DIR, f"{session_id}.jsonl")

    def url_for(self, relative_path: str) -> str:
        return self.config.base_url.rstrip("/") + relative_path

    def resolve_url(self, url: str) -> Optional[ResourceEntry]:
        """把完整地址解析为本存储中的资源"""
        base = self.config.base_url.rstrip("/")
        if not url.startswith(base + "/"):
            return None
        return self.config.entry_for_path(url[len(base):])

    def cursor_store(self) -> _ConfigCursorStore:
        return _ConfigCursorStore(self)

    # ------------------------------------------------------------ 元文件

    def save_config(self) -> None:
        _atomic_write(self.config_path, json.dumps(self.config.to_dict(), indent=2))

    def _load_obligations(self) -> dict:
        return _read_json(self.obligations_path)

    def _save_obligations(self, data: dict) -> None:
        _atomic_write(self.obligations_path, json.dumps(data, indent=2))

    def default_policy(self) -> UsagePolicy:
        return policy_from_dict(self._load_obligations()["default"])

    def specific_policy(self, resource_id: int) -> Optional[UsagePolicy]:
        specific = self._load_obligations()["resources"].get(str(resource_id))
        if not specific:
            return None
        return policy_from_dict(specific)

    def policy_for(self, resource_id: int) -> UsagePolicy:
        return effective_policy(self.default_policy(), self.specific_policy(resource_id))

    # ------------------------------------------------------------ 上传与规则

    def upload_resource(self, relative_path: str, payload: bytes, policy: UsagePolicy) -> int:
        """
        上传资源并登记到链上

        Args:
            relative_path: 以 / 开头的相对路径，如 /images/Mesoplodon.jpg
            payload: 资源内容
            policy: 资源的专属策略，空策略表示沿用默认策略

        Returns:
            链上分配的资源编号
        """
        if not relative_path.startswith("/") or relative_path.endswith("/"):
            raise ValueError(f"资源路径必须以 / 开头且指向文件: {relative_path}")
        if not payload:
            raise ValueError("资源内容不能为空")
        if self.config.entry_for_path(relative_path) or os.path.exists(self.storage_path(relative_path)):
            raise DuplicatePath(f"资源路径已存在: {relative_path}")
        try:
            policy.validate()
        except PolicyError as e:
            raise InvalidPolicy(f"资源策略无效: {e}") from e

        if not self.bridge.ledger.available:
            raise LedgerUnavailable(f"账本不可用，资源未上传: {relative_path}")

        receipt = self.bridge.push_in_submit(
            self.indexing_address, "registerResource",
            self.config.datastore_id, self.url_for(relative_path), 0,
        ).raise_for_status()
        resource_id = receipt.return_value

        # 链上登记成功后立即落盘，此后本地元文件只记录已上链的规则
        path = self.storage_path(relative_path)
        os.makedirs(os.path.dirname(path), exist_ok=True)
        with open(path, "wb") as f:
            f.write(payload)
        self.config.resources.append(ResourceEntry(relative_path, resource_id, self.bridge.ledger.height))
        self.save_config()

        applied = UsagePolicy()
        for rule in policy.rules():
            self.bridge.push_in_submit(
                self.config.obligations_address, f"add{_RULE_FUNCTIONS[rule.rule_type]}",
                resource_id, rule.value,
            ).raise_for_status()
            applied = applied.with_rule(rule)
            obligations = self._load_obligations()
            obligations["resources"][str(resource_id)] = applied.to_dict()
            self._save_obligations(obligations)

        logger.info(f"资源上传完成: {relative_path} -> {resource_id} ({len(policy.rules())} 条专属规则)")
        return resource_id

    def _resource_id_for_scope(self, scope: Union[str, int]) -> Optional[int]:
        if scope == "default":
            return None
        entry = self.config.entry_for_id(scope) if isinstance(scope, int) else self.config.entry_for_path(scope)
        if entry is None:
            raise NotOwnedHere(f"资源不属于本数据存储: {scope}")
        return entry.resource_id

    def set_rule(self, scope: Union[str, int], rule: UsageRule) -> None:
        """
        设置默认规则或资源专属规则，链上与元文件保持一致

        Args:
            scope: "default"、资源相对路径或资源编号
            rule: 新规则
        """
        try:
            validate_rule(rule)
        except PolicyError as e:
            raise InvalidPolicy(f"规则无效: {e}") from e
        resource_id = self._resource_id_for_scope(scope)
        suffix = _RULE_FUNCTIONS[rule.rule_type]
        if resource_id is None:
            self.bridge.push_in_submit(self.config.obligations_address, f"addDefault{suffix}",
                                       rule.value).raise_for_status()
        else:
            self.bridge.push_in_submit(self.config.obligations_address, f"add{suffix}",
                                       resource_id, rule.value).raise_for_status()

        obligations = self._load_obligations()
        if resource_id is None:
            obligations["default"] = self.default_policy().with_rule(rule).to_dict()
        else:
            current = self.specific_policy(resource_id) or UsagePolicy()
            obligations["resources"][str(resource_id)] = current.with_rule(rule).to_dict()
        self._save_obligations(obligations)
        logger.info(f"规则已设置: {scope} {rule.rule_type.value}={rule.value}")

    def remove_rule(self, scope: Union[str, int], rule_type: RuleType) -> None:
        resource_id = self._resource_id_for_scope(scope)
        suffix = _RULE_FUNCTIONS[rule_type]
        if resource_id is None:
            self.bridge.push_in_submit(self.config.obligations_address,
                                       f"removeDefault{suffix}").raise_for_status()
        else:
            self.bridge.push_in_submit(self.config.obligations_address, f"remove{suffix}",
                                       resource_id).raise_for_status()

        obligations = self._load_obligations()
        if resource_id is None:
            obligations["default"] = self.default_policy().without_rule(rule_type).to_dict()
        else:
            remaining = (self.specific_policy(resource_id) or UsagePolicy()).without_rule(rule_type)
            if remaining.is_empty():
                obligations["resources"].pop(str(resource_id), None)
            else:
                obligations["resources"][str(resource_id)] = remaining.to_dict()
        self._save_obligations(obligations)
        logger.info(f"规则已移除: {scope} {rule_type.value}")

    # ------------------------------------------------------------ 请求处理

    def handle_data_request(self, request: DataRequest) -> Optional[DataResponse]:
        """
        依次执行 参数提取 → 证明校验 → 身份认证 → 权限判定 → 响应

        Args:
            request: 数据请求

        Returns:
            数据响应；非 POST 请求被忽略，返回 None
        """
        if request.method.upper() != "POST":
            logger.debug(f"忽略 {request.method} 请求")
            return None

        with self._lock:
            self.last_trace = trace = []

            trace.append("extract")
            if not all((request.url, request.auth_token, request.claim, request.attestation)):
                return self._deny(DenialReason.MALFORMED, request)

            trace.append("attestation")
            if not self.verifier.verify(request.attestation, request.url):
                return self._deny(DenialReason.UNTRUSTED_ORIGIN, request)

            trace.append("authenticate")
            recovered = recover_public_key(request.url.encode("utf-8"), request.auth_token)
            if recovered != request.claim or request.attestation.node_key != request.claim:
                return self._deny(DenialReason.AUTH_FAILED, request)

            trace.append("rights")
            entry = self.resolve_url(request.url)
            if entry is None:
                return self._deny(DenialReason.NOT_FOUND, request)
            if not self.rights(request.claim, entry.resource_id):
                return self._deny(DenialReason.NO_RIGHTS, request)

            trace.append("response")
            with open(self.storage_path(entry.relative_path), "rb") as f:
                payload = f.read()
            policy = self.policy_for(entry.resource_id)

            retrievers = self.config.retrievers.setdefault(entry.resource_id, [])
            consumer = request.claim.hex()
            if consumer not in retrievers:
                retrievers.append(consumer)
                retrievers.sort()
            self.save_config()

            logger.info(f"授予资源 {entry.resource_id} 给 {consumer[:16]}")
            return DataResponse.grant(payload, policy, entry.resource_id)

    def _deny(self, reason: DenialReason, request: DataRequest) -> DataResponse:
        logger.warning(f"拒绝数据请求 {request.url}: {reason.value}")
        return DataResponse.deny(reason)

    # ------------------------------------------------------------ 监控

    def monitor(self, resource_id: int) -> int:
        """
        发起一次监控，期望的回应方为所有获取过该资源的消费者

        Returns:
            监控会话编号
        """
        if self.config.entry_for_id(resource_id) is None:
            raise NotOwnedHere(f"资源不属于本数据存储: {resource_id}")
        responders = sorted(self.config.retrievers.get(resource_id, []))
        receipt = self.bridge.push_in_submit(
            self.config.obligations_address, "monitorCompliance", [resource_id], responders,
        ).raise_for_status()
        session_id = receipt.return_value
        self.pending_sessions.append(session_id)
        logger.info(f"资源 {resource_id} 的监控会话 {session_id} 已发起，等待 {len(responders)} 个回应")
        self.collect_evidence()
        return session_id

    def collect_evidence(self) -> List[int]:
        """把已交回的证据写入 evidence/<会话>.jsonl，返回本次写入的会话"""
        collected = []
        for session_id in list(self.pending_sessions):
            try:
                evidence = self.bridge.ledger.call(self.config.obligations_address, "getEvidence", session_id)
            except TransactionReverted:
                continue
            lines = [json.dumps({"session": session_id, "state": evidence["state"],
                                 "missing": evidence["missing"]}, sort_keys=True)]
            for responder in sorted(evidence["responses"]):
                for line in evidence["responses"][responder].splitlines():
                    if line.strip():
                        record = json.loads(line)
                        record["responder"] = responder
                        lines.append(json.dumps(record, sort_keys=True))
            _atomic_write(self.evidence_path(session_id), "\n".join(lines) + "\n")
            self.pending_sessions.remove(session_id)
            collected.append(session_id)
            logger.info(f"监控会话 {session_id} 的证据已保存: {evidence['state']}")
        return collected

    def schedule_monitoring(self, resource_id: int, period: int) -> "MonitoringScheduler":
        if self.config.entry_for_id(resource_id) is None:
            raise NotOwnedHere(f"资源不属于本数据存储: {resource_id}")
        return MonitoringScheduler(self, resource_id, period)


class MonitoringScheduler:
    """每经过 period 个模拟区块发起一次监控"""

    def __init__(self, datastore: Datastore, resource_id: int, period: int):
        if period < 1:
            raise ValueError(f"监控周期必须至少为 1 个区块: {period}")
        self.datastore = datastore
        self.resource_id = resource_id
        self.period = period
        self.elapsed = 0
        self.sessions: List[int] = []

    def on_block(self) -> Optional[int]:
        self.elapsed += 1
        if self.elapsed % self.period:
            return None
        session_id = self.datastore.monitor(self.resource_id)
        self.sessions.append(session_id)
        return session_id


# ---------------------------------------------------------------- 初始化

def init_datastore(root: str, identity: NodeIdentity, base_url: str, pod_type: str,
                   bridge: OracleBridge, indexing_address: str, verifier: QuoteVerifier,
                   rights: Optional[RightsEvaluator] = None) -> Datastore:
    """
    初始化新的数据存储：先在链上登记，成功后才写元文件

    Args:
        root: 存储目录
        identity: 所有者身份
        base_url: 数据存储的网址
        pod_type: medical / social / financial
        bridge: 所有者节点的预言机组件
        indexing_address: DTindexing 合约地址
        verifier: 证明校验器

    Returns:
        初始化后的数据存储
    """
    if os.path.exists(os.path.join(root, CONFIG_FILE)):
        raise StorageExists(f"数据存储已初始化: {root}")

    receipt = bridge.push_in_submit(
        indexing_address, "registerPod", base_url, pod_type, identity.node_id,
    ).raise_for_status()
    pod_id = receipt.return_value
    pod = bridge.ledger.call(indexing_address, "getPod", pod_id)

    config = DatastoreConfig(pod_id, identity, base_url, pod_type, pod.obligations_address)
    datastore = Datastore(root, config, bridge, indexing_address, verifier, rights)
    os.makedirs(os.path.join(root, STORAGE_DIR), exist_ok=True)
    datastore._save_obligations({"default": {}, "resources": {}})
    datastore.save_config()
    logger.info(f"数据存储初始化完成: {base_url} (编号 {pod_id}, 合约 {pod.obligations_address})")
    return datastore


def open_datastore(root: str, bridge: OracleBridge, indexing_address: str,
                   verifier: QuoteVerifier, rights: Optional[RightsEvaluator] = None) -> Datastore:
    """加载已初始化的数据存储"""
    config_path = os.path.join(root, CONFIG_FILE)
    if not os.path.exists(config_path):
        raise FileNotFoundError(f"数据存储未初始化: {root}")
    return Datastore(root, DatastoreConfig.from_dict(_read_json(config_path)), bridge,
                     indexing_address, verifier, rights)


def rule_from_text(text: str) -> UsageRule:
    """解析 "accessCounter=100"、"domain=research"、"country=Europe" 形式的规则"""
    name, _, value = text.partition("=")
    value = value.strip()
    try:
        rule_type = RuleType.from_name(name.strip())
        if rule_type == RuleType.DOMAIN:
            return make_rule(rule_type, domain_code_for(value))
        if rule_type == RuleType.GEOGRAPHICAL:
            return make_rule(rule_type, region_code_for(value))
        return make_rule(rule_type, int(value))
    except PolicyError as e:
        raise InvalidPolicy(f"规则无效: {text} ({e})") from e
    except ValueError as e:
        raise InvalidPolicy(f"规则取值必须是整数: {text}") from e
