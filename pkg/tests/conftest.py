import os

# single-threaded BLAS: the micro matmuls lose time to thread fan-out, and
# the acceptance budget is stated per core
os.environ.setdefault("OMP_NUM_THREADS", "1")
os.environ.setdefault("OPENBLAS_NUM_THREADS", "1")
os.environ.setdefault("MKL_NUM_THREADS", "1")
