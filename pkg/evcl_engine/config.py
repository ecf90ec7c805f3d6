
import os
from dotenv import load_dotenv

load_dotenv()

class Config:
    # Paths
    DATA_DIR = os.getenv("EVCL_DATA_DIR", "data")
    OUTPUT_DIR = os.getenv("EVCL_OUTPUT_DIR", "runs")

    # Logging
    LOG_LEVEL = os.getenv("EVCL_LOG_LEVEL", "INFO")

    # Harness
    WORKERS = int(os.getenv("EVCL_WORKERS", "1"))
    METRICS_FILE = "metrics.csv"
    SUMMARY_FILE = "summary.csv"

    # Training defaults (full-scale protocol)
    EPOCHS = 100
    BATCH_SIZE = 256
    LEARNING_RATE = 1e-3
    EWC_LAMBDA = 100.0
    FISHER_SAMPLES = 5000
    CORESET_SIZE = 200

    # Monte-Carlo sample counts
    MC_TRAIN_SAMPLES = 10
    MC_EVAL_SAMPLES = 100

    # Variational initialisation
    INIT_MEAN_STD = 0.1
    INIT_LOG_VARIANCE = -6.0  # sigma ~ 0.0498
    PRIOR_VARIANCE = 1.0

    # Adam
    ADAM_BETAS = (0.9, 0.999)
    ADAM_EPS = 1e-8

    # Benchmark label pairs
    SPLIT_PAIRS = {
        "split-mnist": [(0, 1), (2, 3), (4, 5), (6, 7), (8, 9)],
        "split-fashion": [(0, 1), (2, 3), (4, 5), (6, 7), (8, 9)],
        "split-cifar10": [(0, 1), (2, 3), (4, 5), (6, 7), (8, 9)],
        "split-notmnist": [(0, 5), (1, 6), (2, 7), (3, 8), (4, 9)],  # A/F, B/G, C/H, D/I, E/J
    }
