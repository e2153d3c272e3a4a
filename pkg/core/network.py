#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
网络模拟模块

把身份、数据存储、飞地和预言机组件组装成节点，
提供模拟时钟、位置提供者以及按区块推进的离散事件循环
"""

import os
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Set

from loguru import logger

from core.attestation import DEFAULT_BUILD_ID, AttestationAuthority, enclave_measurement
from core.config_manager import ConfigManager
from core.contracts import PodType, SessionState
from core.datastore import (
    DataRequest, DataResponse, Datastore, MonitoringScheduler, init_datastore,
)
from core.enclave import AccessDecision, AppRegistry, Enclave
from core.errors import (
    ConfigError, EnclaveUnavailable, PolicyError, ProviderUnavailable, SimulationError,
)
from core.identity import NodeIdentity
from core.ledger import GasTable, Ledger
from core.oracle_bridge import MemoryCursorStore, OracleBridge
from core.policy import UsagePolicy, domain_code_for, parse_policy

NETWORK_DEFAULTS = {
    'network': {
        'gas_table': '',
        'session_deadline': '10',
        'monitoring_period': '0',
        'sweep_interval': '0',
        'clock_step': '0',
        'seed': 'regov',
        'build_id': DEFAULT_BUILD_ID,
    }
}


# ---------------------------------------------------------------- 上下文提供者

class SimulationClock:
    """模拟时钟（秒）；所有时间相关行为只读取它"""

    def __init__(self, start: int = 0):
        self._now = start
        self.available = True

    def now(self) -> int:
        if not self.available:
            raise ProviderUnavailable("可信时间不可用")
        return self._now

    def advance(self, seconds: int) -> int:
        if seconds < 0:
            raise ValueError(f"时钟不能回退: {seconds}")
        self._now += seconds
        return self._now


class LocationProvider:
    """节点所在国家（ISO 数字代码）"""

    def __init__(self, country: int):
        self.country = country
        self.available = True

    def current(self) -> int:
        if not self.available:
            raise ProviderUnavailable("地理位置不可用")
        return self.country

    def move(self, country: int) -> None:
        logger.info(f"节点位置变更: {self.country} -> {country}")
        self.country = country


# ---------------------------------------------------------------- 网络配置

@dataclass
class NodeSpec:
    name: str
    country: int
    pod_type: str
    base_url: str
    apps: Dict[str, int] = field(default_factory=dict)


@dataclass
class ResourceSpec:
    owner: str
    path: str
    payload: bytes
    policy: UsagePolicy


@dataclass
class NetworkConfig:
    nodes: List[NodeSpec] = field(default_factory=list)
    resources: List[ResourceSpec] = field(default_factory=list)
    gas_table: str = ""
    session_deadline: int = 10
    monitoring_period: int = 0
    sweep_interval: int = 0
    clock_step: int = 0
    seed: str = "regov"
    build_id: str = DEFAULT_BUILD_ID

    @classmethod
    def from_file(cls, path: str, defaults: Optional[Dict[str, str]] = None) -> "NetworkConfig":
        """
        读取 INI 格式的网络配置

        Args:
            path: 配置文件路径，相对路径按配置文件所在目录解析
            defaults: 覆盖 [network] 节内置缺省值的取值，文件中写明的键优先

        Returns:
            网络配置

        Raises:
            ConfigError: 配置错误，信息中包含出错的配置节
        """
        if not os.path.exists(path):
            raise ConfigError(f"网络配置文件不存在: {path}")
        base_dir = os.path.dirname(os.path.abspath(path))
        network_defaults = {'network': {**NETWORK_DEFAULTS['network'], **(defaults or {})}}
        manager = ConfigManager(path, default_config=network_defaults, use_env=False)

        def resolve(file_path: str) -> str:
            return file_path if os.path.isabs(file_path) else os.path.join(base_dir, file_path)

        gas_table = manager.get('network', 'gas_table', '')
        config = cls(
            gas_table=resolve(gas_table) if gas_table else "",
            session_deadline=manager.getint('network', 'session_deadline', 10),
            monitoring_period=manager.getint('network', 'monitoring_period', 0),
            sweep_interval=manager.getint('network', 'sweep_interval', 0),
            clock_step=manager.getint('network', 'clock_step', 0),
            seed=manager.get('network', 'seed', 'regov'),
            build_id=manager.get('network', 'build_id', DEFAULT_BUILD_ID),
        )

        for section, values in manager.sections("node:").items():
            name = section.split(":", 1)[1]
            try:
                config.nodes.append(NodeSpec(
                    name=name,
                    country=int(values.get('country', '')),
                    pod_type=values.get('pod_type', PodType.SOCIAL.value),
                    base_url=values.get('base_url', f"https://{name}Node.com/"),
                ))
            except ValueError as e:
                raise ConfigError(f"[{section}] country 必须是 ISO 数字代码") from e

        nodes = {spec.name: spec for spec in config.nodes}
        for section, values in manager.sections("app:").items():
            parts = section.split(":", 2)
            if len(parts) != 3 or parts[1] not in nodes:
                raise ConfigError(f"[{section}] 应形如 app:NODE:APP_ID，且节点已定义")
            try:
                nodes[parts[1]].apps[parts[2]] = domain_code_for(values.get('domain', ''))
            except PolicyError as e:
                raise ConfigError(f"[{section}] {e}") from e

        for section, values in manager.sections("resource:").items():
            parts = section.split(":", 2)
            if len(parts) != 3 or parts[1] not in nodes:
                raise ConfigError(f"[{section}] 应形如 resource:OWNER:PATH，且节点已定义")
            if 'payload_file' in values:
                with open(resolve(values['payload_file']), 'rb') as f:
                    payload = f.read()
            else:
                payload = values.get('payload_text', '').encode('utf-8')
            policy = UsagePolicy()
            if values.get('policy_file'):
                try:
                    with open(resolve(values['policy_file']), 'rb') as f:
                        policy = parse_policy(f.read())
                except (OSError, PolicyError) as e:
                    raise ConfigError(f"[{section}] 策略文件无效: {e}") from e
            config.resources.append(ResourceSpec(parts[1], parts[2], payload, policy))

        config.validate()
        logger.info(f"网络配置加载完成: {len(config.nodes)} 个节点, {len(config.resources)} 个资源")
        return config

    def validate(self) -> None:
        names = [spec.name for spec in self.nodes]
        if len(names) != len(set(names)):
            raise ConfigError("节点名称重复")
        pod_types = {t.value for t in PodType}
        for spec in self.nodes:
            if spec.pod_type not in pod_types:
                raise ConfigError(f"[node:{spec.name}] 未知数据存储类型: {spec.pod_type}")
        for key in ('session_deadline',):
            if getattr(self, key) < 1:
                raise ConfigError(f"[network] {key} 必须至少为 1")
        for key in ('monitoring_period', 'sweep_interval', 'clock_step'):
            if getattr(self, key) < 0:
                raise ConfigError(f"[network] {key} 不能为负数")
        for resource in self.resources:
            if resource.owner not in names:
                raise ConfigError(f"[resource:{resource.owner}:{resource.path}] 所有者未定义")


# ---------------------------------------------------------------- 节点

class Node:
    """一个参与节点：数据存储（提供方）+ 飞地（消费方）+ 预言机组件"""

    def __init__(self, spec: NodeSpec, identity: NodeIdentity, root: str, network: "Network"):
        self.name = spec.name
        self.identity = identity
        self.root = root
        self.location = LocationProvider(spec.country)
        apps = AppRegistry()
        for app_id, domain_code in sorted(spec.apps.items()):
            apps.register(app_id, domain_code)
        self.enclave = Enclave(identity, os.path.join(root, "enclave.sealed"), network.authority,
                               network.clock.now, self.location.current, apps,
                               build_id=network.config.build_id)
        self.bridge = OracleBridge(identity, network.ledger, network.oracle_address, self.enclave)
        self.datastore: Optional[Datastore] = None
        self.schedulers: List[MonitoringScheduler] = []

    @property
    def node_id(self) -> str:
        return self.identity.node_id

    def fetch(self, owner: "Node", relative_path: str) -> DataResponse:
        """
        从另一个节点的数据存储获取资源并存入本地飞地

        Returns:
            数据存储的响应
        """
        request = self.enclave.build_data_request(owner.datastore.url_for(relative_path))
        response = owner.datastore.handle_data_request(DataRequest.from_wire(request.to_wire()))
        if response.granted:
            self.enclave.store_resource(response.resource_id, response.payload, response.policy)
        return response

    def open(self, app_id: str, resource_id: int) -> AccessDecision:
        return self.enclave.access_protected_resource(app_id, resource_id)


# ---------------------------------------------------------------- 网络

class Network:
    """运行中的模拟网络"""

    def __init__(self, config: NetworkConfig, work_dir: str):
        self.config = config
        self.work_dir = work_dir
        self.clock = SimulationClock()
        gas_table = GasTable.from_file(config.gas_table) if config.gas_table else GasTable()
        self.ledger = Ledger(gas_table)
        self.authority = AttestationAuthority(f"{config.seed}:attestation")
        self.measurement = enclave_measurement(config.build_id)

        self.operator = OracleBridge(NodeIdentity.from_seed(f"{config.seed}:operator"), self.ledger)
        self.oracle_address, receipt = self.operator.push_in_deploy("PullInOracle", config.session_deadline)
        receipt.raise_for_status()
        self.indexing_address, receipt = self.operator.push_in_deploy("DTindexing", self.oracle_address, 0)
        receipt.raise_for_status()

        self.nodes: Dict[str, Node] = {}
        self.tick_count = 0
        self._session_cursor = MemoryCursorStore()
        self._open_sessions: Set[int] = set()
        logger.info(f"网络启动: DTindexing {self.indexing_address}, PullInOracle {self.oracle_address}")

    def add_node(self, spec: NodeSpec) -> Node:
        if spec.name in self.nodes:
            raise ConfigError(f"节点名称重复: {spec.name}")
        identity = NodeIdentity.from_seed(f"{self.config.seed}:{spec.name}")
        node = Node(spec, identity, os.path.join(self.work_dir, spec.name), self)
        node.datastore = init_datastore(
            os.path.join(node.root, "pod"), identity, spec.base_url, spec.pod_type,
            node.bridge, self.indexing_address, self.authority.verifier(self.measurement),
        )
        node.bridge.cursor_store = node.datastore.cursor_store()
        self.nodes[spec.name] = node
        logger.info(f"节点 {spec.name} 已加入网络 ({spec.base_url})")
        return node

    def node(self, name: str) -> Node:
        node = self.nodes.get(name)
        if node is None:
            raise SimulationError(f"未知节点: {name}")
        return node

    def node_name(self, node_id: str) -> str:
        if node_id == self.operator.node_id:
            return "operator"
        return next((n.name for n in self.nodes.values() if n.node_id == node_id), node_id[:16])

    def resource_id(self, owner: str, relative_path: str) -> int:
        entry = self.node(owner).datastore.config.entry_for_path(relative_path)
        if entry is None:
            raise SimulationError(f"{owner} 没有资源 {relative_path}")
        return entry.resource_id

    # ------------------------------------------------------------ 事件循环

    def tick(self) -> None:
        """推进一个区块：各节点按名称顺序轮询事件，然后处理会话、证据、调度和时间检查"""
        self.ledger.produce_block()
        self.tick_count += 1
        if self.config.clock_step:
            self.clock.advance(self.config.clock_step)

        for name in sorted(self.nodes):
            self.nodes[name].bridge.poll_and_dispatch()

        self._close_expired_sessions()

        for name in sorted(self.nodes):
            node = self.nodes[name]
            node.datastore.collect_evidence()
            for scheduler in node.schedulers:
                scheduler.on_block()

        if self.config.sweep_interval and self.tick_count % self.config.sweep_interval == 0:
            for name in sorted(self.nodes):
                try:
                    self.nodes[name].enclave.enforce_temporal_sweep()
                except EnclaveUnavailable:
                    logger.warning(f"节点 {name} 的飞地未运行，跳过时间检查")

    def _close_expired_sessions(self) -> None:
        for event in self.ledger.events_since(self._session_cursor.load()):
            if event.name == "NewMonitoring" and event.contract == self.oracle_address:
                self._open_sessions.add(event.payload["sessionId"])
        self._session_cursor.save(self.ledger.latest_sequence())

        for session_id in sorted(self._open_sessions):
            session = self.ledger.call(self.oracle_address, "getSession", session_id)
            if session.state == SessionState.COMPLETE:
                self._open_sessions.discard(session_id)
            elif session.state == SessionState.TIMED_OUT:
                self.operator.push_in_submit(self.oracle_address, "closeSession", session_id)
                self._open_sessions.discard(session_id)
                logger.info(f"监控会话 {session_id} 超时关闭，"
                            f"{len(session.responses)}/{len(session.expected_responders)} 份证据")

    def run_blocks(self, count: int) -> None:
        for _ in range(count):
            self.tick()


def spawn_network(config: NetworkConfig, work_dir: str) -> Network:
    """
    按配置启动网络：部署合约、初始化每个节点的数据存储并上传初始资源

    Args:
        config: 网络配置
        work_dir: 各节点文件的根目录

    Returns:
        运行中的网络
    """
    os.makedirs(work_dir, exist_ok=True)
    network = Network(config, work_dir)
    for spec in config.nodes:
        network.add_node(spec)
    for resource in config.resources:
        owner = network.node(resource.owner)
        resource_id = owner.datastore.upload_resource(resource.path, resource.payload, resource.policy)
        if config.monitoring_period:
            owner.schedulers.append(owner.datastore.schedule_monitoring(resource_id, config.monitoring_period))
    logger.info(f"网络就绪: {len(network.nodes)} 个节点, 区块高度 {network.ledger.height}")
    return network
