#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
报告测试模块
"""

import unittest
import json
import os
import sys
import tempfile
import shutil

# 添加项目根目录到路径
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from core.enclave import UNLIMITED
from core.errors import SessionNotFinished
from core.network import spawn_network
from core.policy import AccessCounterRule, UsagePolicy, mesoplodon_policy
from core.reports import compliance_report, gas_report, log_dump, replay_usage_log
from core.usage_log import LogAction, UsageLog
from tests.test_datastore import PHOTO_PATH, motivating_config

GRANT_DETAIL = "app=ZooResearch;country=372;domain=1"


class TestReplay(unittest.TestCase):
    """使用日志重放测试类"""

    def setUp(self):
        """测试前准备"""
        self.policy = mesoplodon_policy()
        self.log = UsageLog(7)
        self.log.record(0, LogAction.RETRIEVED)

    def test_compliant_log(self):
        """测试合规日志没有违规"""
        self.log.record(10, LogAction.ACCESS_GRANTED, GRANT_DETAIL + ";remaining=99")
        self.log.record(11, LogAction.ACCESS_DENIED, "rule=domain;app=Socialgram;domain=2")
        result = replay_usage_log(self.log, self.policy)
        self.assertEqual(result.violations, [])
        self.assertEqual((result.grants, result.denials), (1, 1))
        self.assertEqual(result.remaining, 99)
        self.assertTrue(result.present)

    def test_grant_after_deletion(self):
        """测试删除后的访问"""
        self.log.record(5, LogAction.DELETED_EXPIRED, "rule=temporal")
        self.log.record(6, LogAction.ACCESS_GRANTED, GRANT_DETAIL)
        result = replay_usage_log(self.log, self.policy)
        self.assertEqual([v.rule for v in result.violations], ["access_counter"])
        self.assertFalse(result.present)

    def test_counter_overflow(self):
        """测试超过访问次数"""
        policy = UsagePolicy(access_counter=AccessCounterRule(2))
        for t in (1, 2, 3):
            self.log.record(t, LogAction.ACCESS_GRANTED, "app=LabNotebook;domain=1")
        result = replay_usage_log(self.log, policy)
        self.assertEqual(len(result.violations), 1)
        self.assertEqual(result.violations[0].timestamp, 3)
        self.assertEqual(result.remaining, 0)

    def test_refetch_resets_counter(self):
        """测试重新获取后计数重置"""
        policy = UsagePolicy(access_counter=AccessCounterRule(1))
        self.log.record(1, LogAction.ACCESS_GRANTED, "app=LabNotebook")
        self.log.record(1, LogAction.DELETED_EXHAUSTED, "rule=access_counter")
        self.log.record(2, LogAction.RETRIEVED)
        self.log.record(3, LogAction.ACCESS_GRANTED, "app=LabNotebook")
        result = replay_usage_log(self.log, policy)
        self.assertEqual(result.violations, [])
        self.assertEqual(result.grants, 2)

    def test_temporal_boundary(self):
        """测试保留期限的边界"""
        self.log.record(1728000, LogAction.ACCESS_GRANTED, GRANT_DETAIL)
        self.assertEqual(replay_usage_log(self.log, self.policy).violations, [])
        self.log.record(1728001, LogAction.ACCESS_GRANTED, GRANT_DETAIL)
        violations = replay_usage_log(self.log, self.policy).violations
        self.assertEqual([(v.rule, v.timestamp) for v in violations], [("temporal", 1728001)])

    def test_retention_past_deadline(self):
        """测试超过保留期限仍未删除，即使期间没有访问"""
        self.log.record(10, LogAction.ACCESS_GRANTED, GRANT_DETAIL + ";remaining=99")
        self.log.record(2592000, LogAction.TEMPORAL_CHECK, "age=2592000;max=1728000")
        self.log.record(2592000, LogAction.MONITORING_REQUEST, "session=1")
        result = replay_usage_log(self.log, self.policy)
        self.assertEqual([(v.rule, v.timestamp) for v in result.violations], [("temporal", 2592000)])
        self.assertTrue(result.present)

    def test_retention_flagged_at_end_of_log(self):
        """测试日志以超期检查结束时同样判为违规"""
        self.log.record(1728005, LogAction.TEMPORAL_CHECK, "age=1728005;max=1728000")
        violations = replay_usage_log(self.log, self.policy).violations
        self.assertEqual([(v.rule, v.timestamp) for v in violations], [("temporal", 1728005)])

    def test_retention_flagged_once_per_fetch(self):
        """测试同一次获取的超期只记一次，重新获取后重新计算"""
        self.log.record(1728005, LogAction.MONITORING_REQUEST, "session=1")
        self.log.record(1728006, LogAction.ACCESS_DENIED, "rule=domain;app=Socialgram;domain=2")
        self.log.record(1728007, LogAction.MONITORING_REQUEST, "session=2")
        self.log.record(1728008, LogAction.RETRIEVED)
        self.log.record(1728009, LogAction.MONITORING_REQUEST, "session=3")
        result = replay_usage_log(self.log, self.policy)
        self.assertEqual([(v.rule, v.timestamp) for v in result.violations], [("temporal", 1728005)])
        self.assertEqual(result.denials, 1)

    def test_sweep_deletion_is_compliant(self):
        """测试清理时先检查后删除不算违规"""
        self.log.record(1728000, LogAction.TEMPORAL_CHECK, "age=1728000;max=1728000")
        self.log.record(1728001, LogAction.TEMPORAL_CHECK, "age=1728001;max=1728000")
        self.log.record(1728001, LogAction.DELETED_EXPIRED, "rule=temporal")
        self.log.record(1728002, LogAction.MONITORING_REQUEST, "session=1")
        result = replay_usage_log(self.log, self.policy)
        self.assertEqual(result.violations, [])
        self.assertFalse(result.present)

    def test_domain_and_geography(self):
        """测试领域与地区违规"""
        self.log.record(1, LogAction.ACCESS_GRANTED, "app=Socialgram;country=372;domain=2")
        self.log.record(2, LogAction.ACCESS_GRANTED, "app=ZooResearch;country=840;domain=1")
        self.log.record(3, LogAction.ACCESS_GRANTED, "app=ZooResearch;country=unavailable;domain=1")
        violations = replay_usage_log(self.log, self.policy).violations
        self.assertEqual([(v.rule, v.timestamp) for v in violations],
                         [("domain", 1), ("geographical", 2), ("geographical", 3)])

    def test_no_counter(self):
        """测试没有计数规则时剩余次数不限"""
        self.log.record(1, LogAction.ACCESS_GRANTED, "app=LabNotebook")
        result = replay_usage_log(self.log, UsagePolicy())
        self.assertEqual(result.remaining, UNLIMITED)
        self.assertEqual(result.violations, [])
        self.assertEqual(result.to_dict()["grants"], 1)


class TestNetworkReports(unittest.TestCase):
    """基于运行中网络的报告测试类"""

    def setUp(self):
        """测试前准备"""
        self.test_dir = tempfile.mkdtemp()
        self.network = spawn_network(motivating_config(), self.test_dir)
        self.alice, self.bob = self.network.node("Alice"), self.network.node("Bob")
        self.resource_id = self.alice.fetch(self.bob, PHOTO_PATH).resource_id

    def tearDown(self):
        """测试后清理"""
        if os.path.exists(self.test_dir):
            shutil.rmtree(self.test_dir)

    def test_compliance_report(self):
        """测试会话结束前后的合规报告"""
        self.alice.open("ZooResearch", self.resource_id)
        session_id = self.bob.datastore.monitor(self.resource_id)
        with self.assertRaises(SessionNotFinished):
            compliance_report(self.network, session_id)

        self.network.tick()
        report = compliance_report(self.network, session_id)
        self.assertEqual(report.state, "complete")
        self.assertEqual(report.violations, [])
        self.assertEqual(report.non_responders, [])
        self.assertEqual([r.name for r in report.responders], ["Alice"])
        self.assertEqual(report.responders[0].results[0].grants, 1)
        self.assertEqual(report.to_dict()["violations"], 0)
        self.assertIn("Alice: 0 项违规", report.to_text())

    def test_report_names_non_responders(self):
        """测试超时会话列出未回应的节点"""
        self.alice.enclave.set_available(False)
        session_id = self.bob.datastore.monitor(self.resource_id)
        self.network.run_blocks(self.network.config.session_deadline)
        report = compliance_report(self.network, session_id)
        self.assertEqual(report.state, "timed_out")
        self.assertEqual(report.responders, [])
        self.assertEqual(report.non_responders, ["Alice"])
        self.assertIn("Alice: 未回应", report.to_text())

    def test_gas_report(self):
        """测试 Gas 报告"""
        lines = gas_report(self.network.ledger).splitlines()
        self.assertTrue(lines[0].startswith("function"))
        self.assertTrue(lines[-1].startswith("total"))
        self.assertTrue(lines[-1].endswith("10787610"))
        row = next(line for line in lines if line.startswith("DTindexing.registerPod"))
        self.assertTrue(row.endswith(str(2 * 2703393)))

    def test_log_dump(self):
        """测试日志导出不改变日志"""
        self.alice.open("ZooResearch", self.resource_id)
        first = log_dump(self.network, "Alice", "Bob", PHOTO_PATH)
        second = log_dump(self.network, "Alice", "Bob", PHOTO_PATH)
        self.assertEqual(first, second)
        actions = [json.loads(line)["action"] for line in first.splitlines()]
        self.assertEqual(actions, ["retrieved", "access_granted"])


if __name__ == '__main__':
    unittest.main()
