#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
配置管理器模块

管理程序配置（账本、模拟、飞地、路径、日志），也用于读取网络配置文件
"""

import os
import configparser
from typing import Dict, Any, Optional
from loguru import logger

from core.errors import ConfigError


# 程序配置的默认值
DEFAULT_CONFIG = {
    'ledger': {
        'gas_table': '',
        'session_deadline': '10'
    },
    'simulation': {
        'monitoring_period': '0',
        'sweep_interval': '0',
        'clock_step': '0',
        'seed': 'regov'
    },
    'enclave': {
        'build_id': 'regov-enclave-1.0'
    },
    'paths': {
        'work_dir': '',
        'log_dir': 'logs'
    },
    'logging': {
        'level': 'INFO',
        'console_level': 'WARNING'
    }
}

# 环境变量 → (配置节, 配置键)
ENV_MAPPINGS = {
    'REGOV_GAS_TABLE': ('ledger', 'gas_table'),
    'REGOV_SESSION_DEADLINE': ('ledger', 'session_deadline'),
    'REGOV_WORK_DIR': ('paths', 'work_dir'),
    'REGOV_LOG_LEVEL': ('logging', 'level'),
}

LOG_LEVELS = ('TRACE', 'DEBUG', 'INFO', 'SUCCESS', 'WARNING', 'ERROR', 'CRITICAL')


class ConfigManager:
    """配置管理器类"""

    def __init__(self, config_file: str = "config.ini",
                 default_config: Optional[Dict[str, Dict[str, str]]] = None,
                 use_env: bool = True):
        """
        初始化配置管理器

        Args:
            config_file: 配置文件路径
            default_config: 默认配置，缺省为程序配置的默认值
            use_env: 是否应用 REGOV_* 环境变量
        """
        self.config_file = config_file
        self.config = configparser.ConfigParser(interpolation=None)
        self.config.optionxform = str  # 保留键名大小写
        self.default_config = DEFAULT_CONFIG if default_config is None else default_config
        self.use_env = use_env

        self.load_config()
        logger.debug(f"配置管理器初始化完成: {config_file}")

    def load_config(self):
        """加载配置文件"""
        if os.path.exists(self.config_file):
            try:
                self.config.read(self.config_file, encoding='utf-8')
            except configparser.Error as e:
                logger.error(f"加载配置文件失败: {e}")
                raise ConfigError(f"配置文件格式错误: {self.config_file}: {e}") from e
            logger.info(f"配置文件加载成功: {self.config_file}")
        else:
            logger.info("配置文件不存在，使用默认配置")

        # 确保所有默认配置项都存在
        self._ensure_default_config()

        if self.use_env:
            self._load_from_env()

    def save_config(self):
        """
        写回配置文件（包括补齐的默认值）

        Raises:
            ConfigError: 文件无法写入
        """
        directory = os.path.dirname(os.path.abspath(self.config_file))
        try:
            os.makedirs(directory, exist_ok=True)
            with open(self.config_file, "w", encoding="utf-8") as f:
                self.config.write(f)
        except OSError as e:
            logger.error(f"写入配置文件失败: {e}")
            raise ConfigError(f"无法写入配置文件: {self.config_file}") from e
        logger.info(f"配置已写入 {self.config_file}")

    def _ensure_default_config(self):
        """确保所有默认配置项都存在"""
        for section_name, section_config in self.default_config.items():
            if not self.config.has_section(section_name):
                self.config.add_section(section_name)

            for key, default_value in section_config.items():
                if not self.config.has_option(section_name, key):
                    self.config.set(section_name, key, default_value)

    def _load_from_env(self):
        """从环境变量加载配置"""
        for env_var, (section, key) in ENV_MAPPINGS.items():
            value = os.getenv(env_var)
            if value:
                if not self.config.has_section(section):
                    self.config.add_section(section)
                self.config.set(section, key, value)
                logger.debug(f"从环境变量加载: {env_var} -> {section}.{key}")

    def get(self, section: str, key: str, fallback: Any = None) -> str:
        """
        获取配置值

        Args:
            section: 配置节
            key: 配置键
            fallback: 默认值

        Returns:
            配置值
        """
        try:
            return self.config.get(section, key, fallback=fallback)
        except configparser.Error as e:
            logger.warning(f"配置项 {section}.{key} 读取失败，使用默认值: {e}")
            return fallback

    def getint(self, section: str, key: str, fallback: int = 0) -> int:
        """
        获取整数配置值

        Raises:
            ConfigError: 取值不是整数
        """
        try:
            return self.config.getint(section, key, fallback=fallback)
        except ValueError as e:
            raise ConfigError(f"配置项 {section}.{key} 必须是整数: {self.config.get(section, key)}") from e

    def getboolean(self, section: str, key: str, fallback: bool = False) -> bool:
        """获取布尔配置值"""
        try:
            return self.config.getboolean(section, key, fallback=fallback)
        except ValueError as e:
            raise ConfigError(f"配置项 {section}.{key} 必须是布尔值: {self.config.get(section, key)}") from e

    def set(self, section: str, key: str, value: Any):
        """
        设置配置值

        Args:
            section: 配置节
            key: 配置键
            value: 配置值
        """
        if not self.config.has_section(section):
            self.config.add_section(section)
        self.config.set(section, key, str(value))
        logger.debug(f"设置配置: {section}.{key} = {value}")

    def sections(self, prefix: str = "") -> Dict[str, Dict[str, str]]:
        """按前缀列出配置节，保持文件中的顺序"""
        return {name: dict(self.config.items(name)) for name in self.config.sections()
                if name.startswith(prefix)}

    def get_ledger_config(self) -> Dict[str, Any]:
        """获取账本配置"""
        return {
            'gas_table': self.get('ledger', 'gas_table', ''),
            'session_deadline': self.getint('ledger', 'session_deadline', 10)
        }

    def get_simulation_config(self) -> Dict[str, Any]:
        """获取模拟配置"""
        return {
            'monitoring_period': self.getint('simulation', 'monitoring_period', 0),
            'sweep_interval': self.getint('simulation', 'sweep_interval', 0),
            'clock_step': self.getint('simulation', 'clock_step', 0),
            'seed': self.get('simulation', 'seed', 'regov')
        }

    def get_enclave_config(self) -> Dict[str, str]:
        """获取飞地配置"""
        return {
            'build_id': self.get('enclave', 'build_id', 'regov-enclave-1.0')
        }

    def network_defaults(self) -> Dict[str, str]:
        """
        网络配置 [network] 节的缺省值，网络配置文件中写明的值优先

        Returns:
            键为 [network] 节配置键的字典
        """
        ledger_config = self.get_ledger_config()
        simulation_config = self.get_simulation_config()
        defaults = {
            'session_deadline': ledger_config['session_deadline'],
            'monitoring_period': simulation_config['monitoring_period'],
            'sweep_interval': simulation_config['sweep_interval'],
            'clock_step': simulation_config['clock_step'],
            'seed': simulation_config['seed'],
            'build_id': self.get_enclave_config()['build_id'],
        }
        return {key: str(value) for key, value in defaults.items()}

    def get_paths_config(self) -> Dict[str, str]:
        """获取路径配置"""
        return {
            'work_dir': self.get('paths', 'work_dir', ''),
            'log_dir': self.get('paths', 'log_dir', 'logs')
        }

    def get_logging_config(self) -> Dict[str, str]:
        """获取日志配置"""
        return {
            'level': self.get('logging', 'level', 'INFO').upper(),
            'console_level': self.get('logging', 'console_level', 'WARNING').upper()
        }

    def validate_config(self) -> Dict[str, Any]:
        """
        验证配置的有效性

        Returns:
            验证结果字典
        """
        results = {
            'is_valid': True,
            'errors': [],
            'warnings': []
        }

        try:
            ledger_config = self.get_ledger_config()
            if ledger_config['session_deadline'] < 1:
                results['errors'].append("监控会话截止区块数必须至少为 1")
            gas_table = ledger_config['gas_table']
            if gas_table and not os.path.exists(gas_table):
                results['errors'].append(f"费用表文件不存在: {gas_table}")

            simulation_config = self.get_simulation_config()
            for key in ('monitoring_period', 'sweep_interval', 'clock_step'):
                if simulation_config[key] < 0:
                    results['errors'].append(f"simulation.{key} 不能为负数")
            if simulation_config['monitoring_period'] == 0:
                results['warnings'].append("未启用定期监控")
            if not simulation_config['seed']:
                results['errors'].append("simulation.seed 不能为空")
            if not self.get_enclave_config()['build_id']:
                results['errors'].append("enclave.build_id 不能为空")
        except ConfigError as e:
            results['errors'].append(str(e))

        logging_config = self.get_logging_config()
        for key, level in logging_config.items():
            if level not in LOG_LEVELS:
                results['errors'].append(f"未知日志级别 logging.{key}: {level}")

        results['is_valid'] = not results['errors']
        logger.info(f"配置验证完成: {'通过' if results['is_valid'] else '失败'}")
        return results

    def get_all_config(self) -> Dict[str, Dict[str, str]]:
        """获取所有配置"""
        return self.sections()
