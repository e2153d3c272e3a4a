#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
使用日志测试模块
"""

import unittest
import os
import sys

# 添加项目根目录到路径
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from core.errors import MalformedMetafile
from core.usage_log import LogAction, UsageLog, UsageLogEntry, parse_detail


class TestUsageLog(unittest.TestCase):
    """使用日志测试类"""

    def setUp(self):
        """测试前准备"""
        self.log = UsageLog(7)
        self.log.record(0, LogAction.RETRIEVED, "accessCounter=3")
        self.log.record(5, LogAction.ACCESS_GRANTED, "app=ZooResearch;country=372;domain=1;remaining=2")
        self.log.record(5, LogAction.ACCESS_DENIED, "rule=domain;app=Socialgram;country=372;domain=2")

    def test_timestamps_do_not_go_back(self):
        """测试时间戳不能回退"""
        with self.assertRaises(ValueError):
            self.log.record(4, LogAction.TEMPORAL_CHECK)
        self.assertEqual(len(self.log), 3)
        self.assertEqual(self.log.last_timestamp(), 5)

    def test_entry_for_other_resource(self):
        """测试拒绝其他资源的条目"""
        with self.assertRaises(ValueError):
            self.log.append(UsageLogEntry(9, 8, LogAction.RETRIEVED))

    def test_lines(self):
        """测试逐行 JSON 导出与解析"""
        other = UsageLog(8)
        other.record(1, LogAction.RETRIEVED)
        logs = UsageLog.from_lines(self.log.to_lines() + other.to_lines())
        self.assertEqual(logs, [self.log, other])
        self.assertEqual(self.log.count(LogAction.ACCESS_GRANTED), 1)

    def test_copy_is_independent(self):
        """测试副本与原日志互不影响"""
        copy = self.log.copy()
        copy.record(9, LogAction.MONITORING_REQUEST, "session=1")
        self.assertEqual(len(self.log), 3)
        self.assertNotEqual(copy, self.log)

    def test_malformed_lines(self):
        """测试无法解析的行报告字节偏移"""
        text = self.log.to_lines()
        with self.assertRaises(MalformedMetafile) as ctx:
            UsageLog.from_lines(text + "not json\n")
        self.assertEqual(ctx.exception.offset, len(text.encode("utf-8")))

    def test_parse_detail(self):
        """测试细节字段拆分"""
        fields = parse_detail("rule=domain;app=Socialgram;country=372;domain=2")
        self.assertEqual(fields["rule"], "domain")
        self.assertEqual(fields["domain"], "2")
        self.assertEqual(parse_detail(""), {})


if __name__ == '__main__':
    unittest.main()
