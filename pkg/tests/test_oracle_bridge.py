#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
预言机桥接测试模块
"""

import unittest
import os
import sys
import tempfile
import shutil
from unittest.mock import patch

# 添加项目根目录到路径
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from core.contracts import SessionState
from core.errors import LedgerUnavailable
from core.identity import NodeIdentity
from core.ledger import Transaction
from core.network import spawn_network
from core.oracle_bridge import MemoryCursorStore, OracleBridge
from tests.test_datastore import PHOTO_PATH, motivating_config


class TestOracleBridge(unittest.TestCase):
    """预言机桥接测试类"""

    def setUp(self):
        """测试前准备"""
        self.test_dir = tempfile.mkdtemp()
        self.network = spawn_network(motivating_config(), self.test_dir)
        self.ledger = self.network.ledger
        self.alice = self.network.node("Alice")
        self.bob = self.network.node("Bob")
        self.photo = self.network.resource_id("Bob", PHOTO_PATH)

    def tearDown(self):
        """测试后清理"""
        if os.path.exists(self.test_dir):
            shutil.rmtree(self.test_dir)

    def session(self, session_id):
        return self.ledger.call(self.network.oracle_address, "getSession", session_id)

    def test_requires_private_key(self):
        """测试只有公钥的身份不能签名交易"""
        with self.assertRaises(ValueError):
            OracleBridge(self.alice.identity.public_only(), self.ledger)

    def test_stale_nonce_is_refreshed(self):
        """测试本地序号过期时刷新后重试"""
        pod_id = self.alice.datastore.config.datastore_id
        indexing = self.network.indexing_address
        self.alice.bridge.push_in_submit(indexing, "registerResource", pod_id, "https://AliceNode.com/a", 0)

        identity = self.alice.identity
        self.ledger.submit(Transaction.create(identity, indexing, "registerResource",
                                              (pod_id, "https://AliceNode.com/b", 0),
                                              self.ledger.next_nonce(identity)))
        receipt = self.alice.bridge.push_in_submit(indexing, "registerResource", pod_id,
                                                   "https://AliceNode.com/c", 0)
        self.assertTrue(receipt.ok)
        self.assertEqual(receipt.return_value, self.photo + 3)

    def test_push_in_deploy(self):
        """测试推入式部署"""
        address, receipt = self.alice.bridge.push_in_deploy("PullInOracle", 3)
        self.assertTrue(receipt.ok)
        self.assertEqual(self.ledger.contract_kind(address), "PullInOracle")

    def test_answers_monitoring_request(self):
        """测试回应发给本节点的监控请求"""
        self.alice.fetch(self.bob, PHOTO_PATH)
        self.alice.open("ZooResearch", self.photo)
        session_id = self.bob.datastore.monitor(self.photo)

        self.assertEqual(self.alice.bridge.poll_and_dispatch(), 1)
        session = self.session(session_id)
        self.assertEqual(session.state, SessionState.COMPLETE)
        evidence = session.responses[self.alice.node_id]
        self.assertIn('"action": "access_granted"', evidence)
        self.assertIn(f'"detail": "session={session_id}"', evidence)

        self.assertEqual(self.alice.bridge.poll_and_dispatch(), 0)
        self.assertEqual(self.alice.datastore.config.oracle_cursor, self.ledger.latest_sequence())

    def test_ignores_other_nodes_and_unheld_resources(self):
        """测试不回应发给其他节点的请求，也不回应未持有资源的请求"""
        obligations = self.bob.datastore.config.obligations_address
        self.bob.bridge.push_in_submit(obligations, "monitorCompliance", [self.photo],
                                       [self.bob.node_id]).raise_for_status()
        self.assertEqual(self.alice.bridge.poll_and_dispatch(), 0)
        self.assertEqual(self.bob.bridge.poll_and_dispatch(), 0)
        self.assertEqual(self.bob.datastore.config.oracle_cursor, self.ledger.latest_sequence())

    def test_retries_after_enclave_recovers(self):
        """测试飞地恢复后重新处理同一事件"""
        self.alice.fetch(self.bob, PHOTO_PATH)
        before = self.ledger.latest_sequence()
        session_id = self.bob.datastore.monitor(self.photo)

        self.alice.enclave.set_available(False)
        self.assertEqual(self.alice.bridge.poll_and_dispatch(), 0)
        self.assertEqual(self.alice.datastore.config.oracle_cursor, before)
        self.assertEqual(self.session(session_id).state, SessionState.OPEN)

        self.alice.enclave.set_available(True)
        self.assertEqual(self.alice.bridge.poll_and_dispatch(), 1)
        self.assertEqual(self.session(session_id).state, SessionState.COMPLETE)

    def test_ledger_unavailable(self):
        """测试账本不可用时游标停在事件之前"""
        self.alice.fetch(self.bob, PHOTO_PATH)
        before = self.ledger.latest_sequence()
        session_id = self.bob.datastore.monitor(self.photo)
        with patch.object(self.ledger, "submit", side_effect=LedgerUnavailable("账本不可用")) as submit:
            self.assertEqual(self.alice.bridge.poll_and_dispatch(), 0)
            submit.assert_called_once()
        self.assertEqual(self.alice.datastore.config.oracle_cursor, before)
        self.assertEqual(self.alice.bridge.poll_and_dispatch(), 1)
        self.assertEqual(self.session(session_id).state, SessionState.COMPLETE)

    def test_memory_cursor(self):
        """测试内存游标"""
        store = MemoryCursorStore(4)
        self.assertEqual(store.load(), 4)
        store.save(9)
        self.assertEqual(store.load(), 9)
        bridge = OracleBridge(NodeIdentity.from_seed("bridge:watcher"), self.ledger,
                              self.network.oracle_address)
        self.assertEqual(bridge.poll_and_dispatch(), 0)
        self.assertEqual(bridge.cursor_store.load(), self.ledger.latest_sequence())


if __name__ == '__main__':
    unittest.main()
