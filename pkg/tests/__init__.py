"""
测试模块

覆盖策略、账本、合约、飞地、数据存储、网络模拟与场景脚本
"""
