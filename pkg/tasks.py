from dotenv import load_dotenv
from invoke import task

load_dotenv()

SOURCES = "bunca tests"


@task
def update_deps(c):
    """Syncs package dependencies"""
    c.run("pip-compile")


@task
def build_docs(c):
    c.run("rm -rf site")
    c.run("cp README.md docs/index.md")
    c.run("mkdocs build")


@task
def format(c):
    """Formats py code"""
    c.run(f"black --line-length 100 {SOURCES}")


@task
def black_check(c):
    """Checks black format"""
    c.run(f"black --line-length 100 --check {SOURCES}")


@task
def flake8(c):
    """Runs flake8 against project"""
    c.run(f"flake8 --ignore=E501,W503,E203,E741 {SOURCES}")


@task(pre=[flake8, black_check])
def test(c):
    """Run unittest suite"""
    c.run('pytest -W error:UserWarning -m "not slow" tests')


@task
def acceptance(c):
    """Run the slow end-to-end training checks"""
    c.run("pytest -m slow tests")


@task
def gradcheck(c, tol="1e-4"):
    """Finite-difference check of the full training loss"""
    c.run(f"python -m bunca gradcheck --tol {tol}")


@task
def synth(c, out="data/planted", seed=7):
    """Writes the planted-structure dataset used by the acceptance run"""
    c.run(f"python -m bunca synth --out-dir {out} --seed {seed}")
