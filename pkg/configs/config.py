import os
from dotenv import load_dotenv

load_dotenv()


class Config:
    """Settings shared by every environment"""
    DEBUG = False
    TESTING = False

    # Parallelism and seeding
    THREADS = int(os.getenv('MISSPEC_THREADS', '4'))
    MASTER_SEED = int(os.getenv('MISSPEC_SEED', '20040101'))

    # Logging
    LOG_LEVEL = os.getenv('MISSPEC_LOG_LEVEL', 'INFO').upper()

    # Quadrature
    QUAD_ORDER = int(os.getenv('MISSPEC_QUAD_ORDER', '64'))
    QUAD_HALF_WIDTH = float(os.getenv('MISSPEC_QUAD_HALF_WIDTH', '21.0'))

    # Output
    OUT_DIR = os.getenv('MISSPEC_OUT_DIR', 'out')


class DevelopmentConfig(Config):
    """Development configuration"""
    DEBUG = True


class ProductionConfig(Config):
    """Production configuration"""
    DEBUG = False


class TestingConfig(Config):
    """Testing configuration"""
    TESTING = True
    THREADS = 1


config = {
    'development': DevelopmentConfig,
    'production': ProductionConfig,
    'testing': TestingConfig,
    'default': DevelopmentConfig
}


def get_active_config():
    """Return an instance of the active configuration based on MISSPEC_ENV env var."""
    env = os.getenv('MISSPEC_ENV', 'development').lower()
    cfg_class = config.get(env, config['default'])
    return cfg_class()
