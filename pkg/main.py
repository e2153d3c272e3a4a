#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
ReGov 去中心化资源治理模拟器
主程序入口文件

版本: 1.0.0
许可证: MIT
"""

import argparse
import os
import sys
import tempfile
from contextlib import contextmanager
from typing import Iterator, List, Optional, Tuple

from loguru import logger

# 添加项目根目录到 Python 路径
sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

from core.config_manager import ConfigManager
from core.errors import ConfigError, ReGovError
from core.network import Network, NetworkConfig, spawn_network
from core.reports import compliance_report, gas_report, log_dump
from core.scenario import ScenarioResult, run_scenario, split_resource

__version__ = "1.0.0"


def setup_logging(config: ConfigManager, level: Optional[str] = None):
    """设置日志配置"""
    logger.remove()  # 移除默认处理器

    logging_config = config.get_logging_config()
    level = level.upper() if level else None
    log_dir = config.get_paths_config()['log_dir']
    os.makedirs(log_dir, exist_ok=True)

    # 添加文件日志
    logger.add(
        os.path.join(log_dir, "regov.log"),
        rotation="10 MB",
        retention="7 days",
        level=level or logging_config['level'],
        format="{time:YYYY-MM-DD HH:mm:ss} | {level} | {name}:{function}:{line} | {message}",
        encoding="utf-8"
    )

    # 控制台日志输出到 stderr，stdout 留给记录输出
    logger.add(
        sys.stderr,
        level=level or logging_config['console_level'],
        format="<green>{time:HH:mm:ss}</green> | <level>{level: <8}</level> | <cyan>{name}</cyan>:<cyan>{function}</cyan>:<cyan>{line}</cyan> | <level>{message}</level>"
    )


def check_config(config: ConfigManager):
    """验证程序配置，警告写入日志，有错误时抛出 ConfigError"""
    results = config.validate_config()
    for warning in results['warnings']:
        logger.warning(f"配置警告: {warning}")
    if not results['is_valid']:
        for error in results['errors']:
            logger.error(f"配置错误: {error}")
        raise ConfigError(f"程序配置无效: {config.config_file}: {'; '.join(results['errors'])}")


@contextmanager
def replay(config: ConfigManager, network_file: str, script_file: Optional[str] = None,
           work_dir: Optional[str] = None) -> Iterator[Tuple[Network, Optional[ScenarioResult]]]:
    """
    启动网络并（可选）执行脚本；运行是确定性的，报告命令都通过重放得到

    Args:
        config: 程序配置
        network_file: 网络配置文件
        script_file: 场景脚本
        work_dir: 节点文件目录，缺省使用临时目录
    """
    network_config = NetworkConfig.from_file(network_file, defaults=config.network_defaults())
    default_gas_table = config.get_ledger_config()['gas_table']
    if not network_config.gas_table and default_gas_table:
        network_config.gas_table = default_gas_table

    work_dir = work_dir or config.get_paths_config()['work_dir']
    with tempfile.TemporaryDirectory(prefix="regov-") as tmp_dir:
        network = spawn_network(network_config, work_dir or tmp_dir)
        result = run_scenario(network, script_file) if script_file else None
        yield network, result


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="regov", description="ReGov 去中心化资源治理模拟器")
    parser.add_argument("--config", default="config.ini", help="程序配置文件")
    parser.add_argument("--work-dir", default=None, help="节点文件目录（缺省为临时目录）")
    parser.add_argument("--log-level", default=None, help="覆盖日志级别")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("spawn", help="按网络配置启动网络并输出摘要")
    p.add_argument("network")

    p = sub.add_parser("run", help="执行场景脚本，输出逐行 JSON 记录")
    p.add_argument("network")
    p.add_argument("script")
    p.add_argument("--transcript", default=None, help="记录输出文件（缺省为标准输出）")

    p = sub.add_parser("gas-report", help="输出按函数汇总的 Gas")
    p.add_argument("network")
    p.add_argument("script", nargs="?")

    p = sub.add_parser("evidence-report", help="输出监控会话的合规报告")
    p.add_argument("network")
    p.add_argument("script")
    p.add_argument("session", type=int)

    p = sub.add_parser("log-dump", help="导出节点飞地中的使用日志")
    p.add_argument("network")
    p.add_argument("script")
    p.add_argument("node")
    p.add_argument("resource", help="OWNER:/path")
    return parser


def run_command(args: argparse.Namespace, config: ConfigManager) -> int:
    """执行子命令，返回退出码"""
    script = getattr(args, "script", None)
    with replay(config, args.network, script, args.work_dir) as (network, result):
        if args.command == "spawn":
            print(f"nodes: {', '.join(sorted(network.nodes)) or '-'}")
            print(f"indexing: {network.indexing_address}")
            print(f"oracle: {network.oracle_address}")
            print(f"height: {network.ledger.height}")
            print(f"gas: {network.ledger.total_gas()}")
            return 0

        if args.command == "run":
            if args.transcript:
                with open(args.transcript, "w", encoding="utf-8") as f:
                    f.write(result.to_lines())
            else:
                sys.stdout.write(result.to_lines())
            for failure in result.failures:
                logger.error(failure)
            return result.exit_status

        if args.command == "gas-report":
            print(gas_report(network.ledger))
            return 0

        if args.command == "evidence-report":
            print(compliance_report(network, args.session).to_text())
            return 0

        if args.command == "log-dump":
            owner, path = split_resource(args.resource)
            sys.stdout.write(log_dump(network, args.node, owner, path))
            return 0

    raise ValueError(f"未知命令: {args.command}")


def main(argv: Optional[List[str]] = None) -> int:
    """主函数"""
    args = build_parser().parse_args(argv)
    try:
        config = ConfigManager(args.config)
        check_config(config)
        setup_logging(config, args.log_level)
        logger.info(f"启动 ReGov v{__version__}: {args.command}")
        return run_command(args, config)
    except ReGovError as e:
        logger.error(f"执行失败: {e}")
        return 2
    except Exception as e:
        logger.exception(f"程序异常退出: {e}")
        return 1


if __name__ == "__main__":
    sys.exit(main())
