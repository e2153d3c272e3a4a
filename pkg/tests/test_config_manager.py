#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
配置管理器测试模块
"""

import unittest
import os
import sys
import tempfile
import shutil
from unittest.mock import patch

# 添加项目根目录到路径
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from core.config_manager import ConfigManager
from core.errors import ConfigError


class TestConfigManager(unittest.TestCase):
    """配置管理器测试类"""

    def setUp(self):
        """测试前准备"""
        self.test_dir = tempfile.mkdtemp()
        self.config_file = os.path.join(self.test_dir, "config.ini")

    def tearDown(self):
        """测试后清理"""
        if os.path.exists(self.test_dir):
            shutil.rmtree(self.test_dir)

    def write(self, text):
        with open(self.config_file, "w", encoding="utf-8") as f:
            f.write(text)

    def test_defaults(self):
        """测试配置文件不存在时使用默认值"""
        config = ConfigManager(self.config_file, use_env=False)
        self.assertEqual(config.get_ledger_config(), {'gas_table': '', 'session_deadline': 10})
        self.assertEqual(config.get_simulation_config()['seed'], 'regov')
        self.assertEqual(config.get_paths_config()['log_dir'], 'logs')
        self.assertEqual(config.get_logging_config(), {'level': 'INFO', 'console_level': 'WARNING'})
        self.assertFalse(os.path.exists(self.config_file))

    def test_file_overrides_defaults(self):
        """测试配置文件覆盖默认值，缺少的键补齐"""
        self.write("[ledger]\nsession_deadline = 4\n\n[logging]\nlevel = debug\n")
        config = ConfigManager(self.config_file, use_env=False)
        self.assertEqual(config.get_ledger_config()['session_deadline'], 4)
        self.assertEqual(config.get_logging_config()['level'], 'DEBUG')
        self.assertEqual(config.get('simulation', 'clock_step'), '0')

    def test_env_override(self):
        """测试环境变量覆盖配置文件"""
        self.write("[ledger]\nsession_deadline = 4\n")
        with patch.dict(os.environ, {'REGOV_SESSION_DEADLINE': '7', 'REGOV_LOG_LEVEL': 'ERROR'}):
            config = ConfigManager(self.config_file)
            ignored = ConfigManager(self.config_file, use_env=False)
        self.assertEqual(config.get_ledger_config()['session_deadline'], 7)
        self.assertEqual(config.get_logging_config()['level'], 'ERROR')
        self.assertEqual(ignored.get_ledger_config()['session_deadline'], 4)

    def test_getint_error(self):
        """测试整数配置项格式错误"""
        self.write("[simulation]\nclock_step = fast\n")
        config = ConfigManager(self.config_file, use_env=False)
        with self.assertRaises(ConfigError) as ctx:
            config.getint('simulation', 'clock_step')
        self.assertIn("simulation.clock_step", str(ctx.exception))
        self.assertEqual(config.getint('simulation', 'missing', 3), 3)

    def test_parse_error(self):
        """测试配置文件格式错误"""
        self.write("session_deadline = 4\n")
        with self.assertRaises(ConfigError):
            ConfigManager(self.config_file, use_env=False)

    def test_validate_config(self):
        """测试配置验证"""
        config = ConfigManager(self.config_file, use_env=False)
        results = config.validate_config()
        self.assertTrue(results['is_valid'])
        self.assertEqual(results['warnings'], ["未启用定期监控"])

        config.set('ledger', 'session_deadline', 0)
        config.set('ledger', 'gas_table', os.path.join(self.test_dir, "missing.ini"))
        config.set('simulation', 'sweep_interval', -1)
        config.set('logging', 'level', 'LOUD')
        results = config.validate_config()
        self.assertFalse(results['is_valid'])
        self.assertEqual(len(results['errors']), 4)

    def test_network_defaults(self):
        """测试程序配置转换为网络配置的缺省值"""
        self.write("[ledger]\nsession_deadline = 4\n\n[simulation]\nclock_step = 60\nseed = lab\n\n"
                   "[enclave]\nbuild_id = lab-enclave\n")
        config = ConfigManager(self.config_file, use_env=False)
        self.assertEqual(config.network_defaults(), {
            'session_deadline': '4', 'monitoring_period': '0', 'sweep_interval': '0',
            'clock_step': '60', 'seed': 'lab', 'build_id': 'lab-enclave',
        })
        self.assertEqual(config.get_enclave_config(), {'build_id': 'lab-enclave'})

    def test_validate_empty_identifiers(self):
        """测试种子与飞地构建标识不能为空"""
        self.write("[simulation]\nseed =\n\n[enclave]\nbuild_id =\n")
        results = ConfigManager(self.config_file, use_env=False).validate_config()
        self.assertFalse(results['is_valid'])
        self.assertEqual(len(results['errors']), 2)

    def test_validate_reports_bad_integer(self):
        """测试验证时整数格式错误记为错误"""
        self.write("[ledger]\nsession_deadline = soon\n")
        results = ConfigManager(self.config_file, use_env=False).validate_config()
        self.assertFalse(results['is_valid'])
        self.assertIn("ledger.session_deadline", results['errors'][0])

    def test_save_and_reload(self):
        """测试保存后重新加载"""
        config = ConfigManager(self.config_file, use_env=False)
        config.set('simulation', 'monitoring_period', 5)
        config.set('node:Alice', 'Country', 372)
        config.save_config()

        reloaded = ConfigManager(self.config_file, use_env=False)
        self.assertEqual(reloaded.get_simulation_config()['monitoring_period'], 5)
        self.assertEqual(reloaded.sections("node:"), {'node:Alice': {'Country': '372'}})
        self.assertIn('paths', reloaded.get_all_config())

    def test_save_error(self):
        """测试配置文件无法写入"""
        self.write("[ledger]\n")
        config = ConfigManager(os.path.join(self.config_file, "nested.ini"), use_env=False)
        with self.assertRaises(ConfigError):
            config.save_config()

    def test_custom_defaults(self):
        """测试自定义默认值"""
        config = ConfigManager(self.config_file, default_config={'network': {'seed': 'x'}}, use_env=False)
        self.assertEqual(list(config.get_all_config()), ['network'])
        self.assertEqual(config.get('network', 'seed'), 'x')


if __name__ == '__main__':
    unittest.main()
