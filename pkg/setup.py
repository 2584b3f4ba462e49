#!/usr/bin/env python3
"""
Record Weaver Setup Script
Installs the pinned stack, writes a .env template and smoke-checks the bundled schema
"""

import os
import subprocess
import sys
from pathlib import Path

MIN_PYTHON = (3, 9)
ROOT = Path(__file__).resolve().parent
REQUIREMENTS = ROOT / "requirements.txt"
REQUIRED_IMPORTS = ("torch", "numpy", "scipy", "pandas", "Levenshtein", "yaml", "pydantic", "dotenv")

ENV_TEMPLATE = """# Record Weaver environment
# Directory that receives every command's reports (overrides output.dir)
# RECORD_WEAVER_OUTPUT_DIR=runs
"""


def require_python():
    """Exit unless the interpreter is at least MIN_PYTHON"""
    if sys.version_info < MIN_PYTHON:
        print(f"❌ Record Weaver needs Python {MIN_PYTHON[0]}.{MIN_PYTHON[1]}+, found {sys.version.split()[0]}")
        sys.exit(1)
    print(f"✅ Python {sys.version.split()[0]}")


def install_requirements():
    """pip install the pinned requirements into the running interpreter"""
    print(f"🔄 Installing {REQUIREMENTS.name}...")
    result = subprocess.run([sys.executable, "-m", "pip", "install", "-r", str(REQUIREMENTS)],
                            capture_output=True, text=True)
    if result.returncode != 0:
        print(f"❌ pip exited with {result.returncode}")
        print(result.stderr.strip().splitlines()[-1] if result.stderr.strip() else "")
        return False
    print("✅ Requirements installed")
    return True


def check_imports():
    missing = []
    for name in REQUIRED_IMPORTS:
        try:
            __import__(name)
        except ImportError:
            missing.append(name)
    if missing:
        print(f"❌ Still missing after install: {', '.join(missing)}")
        return False
    print(f"✅ {len(REQUIRED_IMPORTS)} numeric, data and config packages import")
    return True


def create_env_file():
    """Write a default .env unless one exists"""
    env_path = ROOT / ".env"
    if env_path.exists():
        print("✅ .env already present")
        return
    env_path.write_text(ENV_TEMPLATE)
    print("✅ .env created")


def check_bundled_schema():
    """Parse and compile the shipped address schema"""
    try:
        from generators.schema_compiler import compile_schema, load_bundled_schema

        plan = compile_schema(load_bundled_schema("address"))
    except Exception as e:
        print(f"❌ Schema check failed: {e}")
        return False
    print(f"✅ Address schema compiles to {plan.arity} tuple elements")
    return True


def main():
    """Main setup function"""
    print("🚀 Record Weaver Setup")
    print("=" * 50)
    os.chdir(ROOT)

    require_python()
    if not (install_requirements() and check_imports()):
        print("❌ Setup failed at Python dependencies")
        sys.exit(1)

    create_env_file()

    if not check_bundled_schema():
        print("❌ Setup failed at schema check")
        sys.exit(1)

    print("\n🎉 Setup completed successfully!")
    print("\n📋 Next steps:")
    print("1. Toy statistics:  python run.py stats --config configs/toy.yaml")
    print("2. Train:           python run.py train --config configs/toy.yaml")
    print("3. Generate:        python run.py generate --config configs/toy.yaml")
    print("4. Run the tests:   pytest")


if __name__ == "__main__":
    main()
