import subprocess
import sys
import os
import logging

# Setup logging
logging.basicConfig(level=logging.INFO, format='%(asctime)s - %(levelname)s - %(message)s')
logger = logging.getLogger(__name__)

BASE_DIR = os.path.dirname(os.path.abspath(__file__))

PIPELINES = [
    ["elementary"],
    ["taxonomy"],
    ["rates", "--audit"],
    ["meso"],
]

VALIDATION = ["validate"]


def run_pipeline(stage):
    logger.info(f">>> Running {' '.join(stage)}...")
    try:
        # Use sys.executable to ensure we use the same python environment
        subprocess.run([sys.executable, "-m", "pipelines", *stage], check=True,
                       capture_output=True, text=True, cwd=BASE_DIR)
        logger.info(f"Successfully completed {stage[0]}")
        return True
    except subprocess.CalledProcessError as e:
        logger.error(f"Error running {stage[0]} (exit {e.returncode}):")
        logger.error(e.stderr)
        return False


def main(argv=None):
    argv = sys.argv[1:] if argv is None else argv
    stages = list(PIPELINES)
    if "--validate" in argv:
        stages.append(VALIDATION)
    logger.info("Starting Kawasaki tunneling sweep")

    for stage in stages:
        success = run_pipeline(stage)
        if not success:
            logger.error(f"Pipeline failed at {stage[0]}. Aborting.")
            sys.exit(1)

    logger.info("All pipeline steps completed successfully!")


if __name__ == "__main__":
    main()
