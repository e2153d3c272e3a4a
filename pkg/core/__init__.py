"""
核心业务逻辑模块

包含使用策略、账本与治理合约、预言机、数据存储、飞地和网络模拟等核心功能
"""

from .config_manager import ConfigManager
from .contracts import DTindexing, DTobligations, PullInOracle
from .datastore import DataRequest, DataResponse, Datastore, init_datastore
from .enclave import AppRegistry, Enclave
from .identity import NodeIdentity
from .ledger import GasTable, Ledger
from .network import Network, NetworkConfig, spawn_network
from .oracle_bridge import OracleBridge
from .policy import UsagePolicy, parse_policy, serialize_policy
from .scenario import run_scenario

__all__ = [
    'ConfigManager', 'DTindexing', 'DTobligations', 'PullInOracle', 'DataRequest', 'DataResponse',
    'Datastore', 'init_datastore', 'AppRegistry', 'Enclave', 'NodeIdentity', 'GasTable', 'Ledger',
    'Network', 'NetworkConfig', 'spawn_network', 'OracleBridge', 'UsagePolicy', 'parse_policy',
    'serialize_policy', 'run_scenario',
]
