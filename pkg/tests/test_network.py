#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
网络模拟测试模块
"""

import unittest
import json
import os
import sys
import tempfile
import shutil

# 添加项目根目录到路径
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from core.contracts import SessionState
from core.errors import ConfigError, ProviderUnavailable, SimulationError
from core.network import (
    LocationProvider, NetworkConfig, NodeSpec, ResourceSpec, SimulationClock, spawn_network,
)
from core.policy import mesoplodon_policy
from core.scenario import run_scenario
from core.usage_log import LogAction, UsageLog

PROJECT_DIR = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
SCENARIO_DIR = os.path.join(PROJECT_DIR, "scenarios")
PHOTO_PATH = "/images/Mesoplodon.jpg"


class TestProviders(unittest.TestCase):
    """上下文提供者测试类"""

    def test_clock(self):
        """测试模拟时钟"""
        clock = SimulationClock(100)
        self.assertEqual(clock.advance(20), 120)
        with self.assertRaises(ValueError):
            clock.advance(-1)
        clock.available = False
        with self.assertRaises(ProviderUnavailable):
            clock.now()

    def test_location(self):
        """测试位置提供者"""
        location = LocationProvider(372)
        location.move(840)
        self.assertEqual(location.current(), 840)
        location.available = False
        with self.assertRaises(ProviderUnavailable):
            location.current()


class TestNetworkConfig(unittest.TestCase):
    """网络配置测试类"""

    def setUp(self):
        """测试前准备"""
        self.test_dir = tempfile.mkdtemp()

    def tearDown(self):
        """测试后清理"""
        if os.path.exists(self.test_dir):
            shutil.rmtree(self.test_dir)

    def write(self, name, text):
        path = os.path.join(self.test_dir, name)
        with open(path, "w", encoding="utf-8") as f:
            f.write(text)
        return path

    def test_sample_network(self):
        """测试示例网络配置"""
        config = NetworkConfig.from_file(os.path.join(SCENARIO_DIR, "network.ini"))
        self.assertEqual([n.name for n in config.nodes], ["Alice", "Bob"])
        self.assertEqual(config.nodes[0].apps, {"ZooResearch": 1, "Socialgram": 2})
        self.assertEqual(config.nodes[1].base_url, "https://BobNode.com/")
        self.assertEqual(len(config.resources), 1)
        self.assertEqual(config.resources[0].owner, "Bob")
        self.assertEqual(config.resources[0].path, PHOTO_PATH)
        self.assertEqual(config.resources[0].policy, mesoplodon_policy())
        self.assertEqual(config.session_deadline, 10)

    def test_defaults_and_payload_file(self):
        """测试缺省值与资源文件"""
        self.write("photo.bin", "raw bytes")
        path = self.write("net.ini", "[node:Eve]\ncountry = 250\n\n"
                                     "[resource:Eve:/photo.bin]\npayload_file = photo.bin\n")
        config = NetworkConfig.from_file(path)
        self.assertEqual(config.nodes[0].base_url, "https://EveNode.com/")
        self.assertEqual(config.nodes[0].pod_type, "social")
        self.assertEqual(config.resources[0].payload, b"raw bytes")
        self.assertTrue(config.resources[0].policy.is_empty())
        self.assertEqual(config.sweep_interval, 0)

    def test_caller_defaults(self):
        """测试调用方提供的缺省值只作用于文件未写明的键"""
        path = self.write("net.ini", "[network]\nsession_deadline = 6\n\n[node:Eve]\ncountry = 250\n")
        config = NetworkConfig.from_file(path, defaults={'session_deadline': '3', 'clock_step': '60',
                                                         'seed': 'lab', 'build_id': 'lab-enclave'})
        self.assertEqual(config.session_deadline, 6)
        self.assertEqual(config.clock_step, 60)
        self.assertEqual(config.seed, 'lab')
        self.assertEqual(config.build_id, 'lab-enclave')
        self.assertEqual(config.sweep_interval, 0)

    def test_errors(self):
        """测试配置错误时指出出错的配置节"""
        cases = {
            "[node:Eve]\ncountry = France\n": "[node:Eve]",
            "[node:Eve]\ncountry = 250\npod_type = gaming\n": "[node:Eve]",
            "[app:Mallory:Game]\ndomain = research\n": "[app:Mallory:Game]",
            "[node:Eve]\ncountry = 250\n[app:Eve:Game]\ndomain = gaming\n": "[app:Eve:Game]",
            "[node:Eve]\ncountry = 250\n[resource:Eve:/a]\npayload_text = x\npolicy_file = nope.json\n":
                "[resource:Eve:/a]",
            "[network]\nsweep_interval = -1\n": "[network]",
            "[network]\nsession_deadline = soon\n": "network.session_deadline",
        }
        for text, section in cases.items():
            with self.subTest(section=section):
                with self.assertRaises(ConfigError) as ctx:
                    NetworkConfig.from_file(self.write("bad.ini", text))
                self.assertIn(section, str(ctx.exception))
        with self.assertRaises(ConfigError):
            NetworkConfig.from_file(os.path.join(self.test_dir, "missing.ini"))

    def test_bad_policy_file(self):
        """测试策略文件格式错误"""
        self.write("policy.json", '{"accessCounter": 0}')
        path = self.write("net.ini", "[node:Eve]\ncountry = 250\n"
                                     "[resource:Eve:/a]\npayload_text = x\npolicy_file = policy.json\n")
        with self.assertRaises(ConfigError):
            NetworkConfig.from_file(path)


class NetworkTestCase(unittest.TestCase):
    """按配置启动网络的基类"""

    def setUp(self):
        """测试前准备"""
        self.test_dir = tempfile.mkdtemp()

    def tearDown(self):
        """测试后清理"""
        if os.path.exists(self.test_dir):
            shutil.rmtree(self.test_dir)

    def spawn(self, name="run", **overrides):
        config = NetworkConfig(
            nodes=[
                NodeSpec("Alice", 372, "social", "https://AliceNode.com/", {"ZooResearch": 1}),
                NodeSpec("Bob", 372, "social", "https://BobNode.com/"),
                NodeSpec("Carol", 276, "medical", "https://CarolNode.com/", {"LabNotebook": 1}),
            ],
            resources=[ResourceSpec("Bob", PHOTO_PATH, b"whale", mesoplodon_policy())],
            seed="network-test",
        )
        for key, value in overrides.items():
            setattr(config, key, value)
        return spawn_network(config, os.path.join(self.test_dir, name))


class TestNetwork(NetworkTestCase):
    """网络测试类"""

    def test_spawn(self):
        """测试启动网络的链上状态与 Gas"""
        network = self.spawn()
        self.assertEqual(sorted(network.nodes), ["Alice", "Bob", "Carol"])
        self.assertEqual(network.ledger.total_gas(), 4824135 + 3 * 2703393 + 143004 + 138768 + 97737 + 97728 + 79452)
        pods = network.ledger.call(network.indexing_address, "getSocialPods")
        self.assertEqual([p.base_url for p in pods], ["https://AliceNode.com/", "https://BobNode.com/"])
        self.assertEqual(network.node_name(network.node("Carol").node_id), "Carol")
        self.assertEqual(network.node_name(network.operator.node_id), "operator")
        with self.assertRaises(SimulationError):
            network.node("Mallory")
        with self.assertRaises(SimulationError):
            network.resource_id("Bob", "/missing.jpg")

    def test_fetch_and_open(self):
        """测试节点获取并打开资源"""
        network = self.spawn()
        alice, bob = network.node("Alice"), network.node("Bob")
        response = alice.fetch(bob, PHOTO_PATH)
        self.assertTrue(response.granted)
        decision = alice.open("ZooResearch", response.resource_id)
        self.assertEqual(decision.payload, b"whale")
        self.assertEqual(decision.remaining, 99)

    def test_tick_runs_sweep_and_clock(self):
        """测试每个区块推进时钟，并按间隔执行时间检查"""
        network = self.spawn(clock_step=864000, sweep_interval=2)
        alice, bob = network.node("Alice"), network.node("Bob")
        resource_id = alice.fetch(bob, PHOTO_PATH).resource_id
        network.run_blocks(2)
        self.assertEqual(network.clock.now(), 1728000)
        self.assertTrue(alice.enclave.holds(resource_id))
        network.run_blocks(2)
        self.assertFalse(alice.enclave.holds(resource_id))

    def test_periodic_monitoring(self):
        """测试定期监控与证据收集"""
        network = self.spawn(monitoring_period=3)
        alice, bob, carol = network.node("Alice"), network.node("Bob"), network.node("Carol")
        resource_id = alice.fetch(bob, PHOTO_PATH).resource_id
        carol.fetch(bob, PHOTO_PATH)
        alice.open("ZooResearch", resource_id)
        network.run_blocks(3)
        self.assertEqual(len(bob.schedulers), 1)
        session_id = bob.schedulers[0].sessions[0]
        network.run_blocks(1)

        session = network.ledger.call(network.oracle_address, "getSession", session_id)
        self.assertEqual(session.state, SessionState.COMPLETE)
        self.assertEqual(set(session.responses), {alice.node_id, carol.node_id})

        with open(bob.datastore.evidence_path(session_id), "r", encoding="utf-8") as f:
            lines = [json.loads(line) for line in f]
        self.assertEqual(lines[0], {"session": session_id, "state": "complete", "missing": []})
        self.assertEqual({r["responder"] for r in lines[1:]}, {alice.node_id, carol.node_id})
        self.assertIn("access_granted", [r["action"] for r in lines[1:]])

    def test_three_consumers_complete_session(self):
        """测试三个持有者都回应后会话完成，每份证据都记录了本次监控请求"""
        nodes = [
            NodeSpec("Alice", 372, "social", "https://AliceNode.com/", {"ZooResearch": 1}),
            NodeSpec("Bob", 372, "social", "https://BobNode.com/"),
            NodeSpec("Carol", 276, "medical", "https://CarolNode.com/", {"LabNotebook": 1}),
            NodeSpec("Erin", 250, "financial", "https://ErinNode.com/", {"FieldGuide": 1}),
        ]
        network = self.spawn(nodes=nodes)
        bob = network.node("Bob")
        consumers = [network.node(name) for name in ("Alice", "Carol", "Erin")]
        resource_id = None
        for consumer in consumers:
            resource_id = consumer.fetch(bob, PHOTO_PATH).resource_id
        network.node("Erin").open("FieldGuide", resource_id)

        session_id = bob.datastore.monitor(resource_id)
        network.tick()

        session = network.ledger.call(network.oracle_address, "getSession", session_id)
        self.assertEqual(session.state, SessionState.COMPLETE)
        self.assertEqual(set(session.responses), {c.node_id for c in consumers})
        for consumer in consumers:
            logs = UsageLog.from_lines(session.responses[consumer.node_id])
            self.assertEqual([log.resource_id for log in logs], [resource_id])
            last = logs[0].entries[-1]
            self.assertEqual(last.action, LogAction.MONITORING_REQUEST)
            self.assertEqual(last.detail, f"session={session_id}")
            self.assertEqual(logs[0].entries[0].action, LogAction.RETRIEVED)

        erin_log = UsageLog.from_lines(session.responses[network.node("Erin").node_id])[0]
        self.assertEqual(erin_log.count(LogAction.ACCESS_GRANTED), 1)

    def test_timeout_closes_session(self):
        """测试飞地停止运行的节点不回应，会话截止后超时"""
        network = self.spawn(session_deadline=4)
        alice, bob, carol = network.node("Alice"), network.node("Bob"), network.node("Carol")
        resource_id = alice.fetch(bob, PHOTO_PATH).resource_id
        carol.fetch(bob, PHOTO_PATH)
        carol.enclave.set_available(False)
        session_id = bob.datastore.monitor(resource_id)
        network.run_blocks(6)

        session = network.ledger.call(network.oracle_address, "getSession", session_id)
        self.assertEqual(session.state, SessionState.TIMED_OUT)
        self.assertEqual(session.missing_responders(), [carol.node_id])
        self.assertEqual(network.ledger.gas_by_function()["PullInOracle.closeSession"], 0)
        self.assertTrue(os.path.exists(bob.datastore.evidence_path(session_id)))


class TestDeterminism(NetworkTestCase):
    """同一配置与脚本的两次运行结果逐字节相同"""

    def run_once(self, name):
        config = NetworkConfig.from_file(os.path.join(SCENARIO_DIR, "network.ini"))
        network = spawn_network(config, os.path.join(self.test_dir, name))
        result = run_scenario(network, os.path.join(SCENARIO_DIR, "motivating.scenario"))
        return result.to_lines(), network.ledger.export_events(), network.ledger.state_digest()

    def test_two_runs(self):
        """测试两次运行的记录、事件与合约状态相同"""
        first = self.run_once("first")
        second = self.run_once("second")
        self.assertEqual(first, second)
        self.assertTrue(first[0])

    def test_empty_network(self):
        """测试没有节点的网络"""
        network = spawn_network(NetworkConfig(), os.path.join(self.test_dir, "empty"))
        network.run_blocks(3)
        self.assertEqual(network.ledger.total_gas(), 4824135)
        self.assertEqual(network.nodes, {})


if __name__ == '__main__':
    unittest.main()
