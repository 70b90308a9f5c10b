from setuptools import setup, find_packages

setup(
    name="calipersynth",
    version="1.0.0",
    packages=find_packages(exclude=["tests", "tests.*"]),
    install_requires=[
        "numpy>=1.22",
        "pandas>=1.5",
        "scipy>=1.8",
        "PyYAML>=6.0.1",
        "python-dotenv>=1.0.0",
        "rich>=13.7.0"
    ],
    extras_require={
        "dev": ["pytest>=7.0"]
    },
    entry_points={
        "console_scripts": [
            "csm=calipersynth.cli:main"
        ]
    },
    description="Caliper synthetic matching: covariate-wise calipers, synthetic-control weights and plug-in inference for the ATT",
    long_description=open("README.md").read(),
    long_description_content_type="text/markdown",
    classifiers=[
        "Development Status :: 4 - Beta",
        "Intended Audience :: Science/Research",
        "Topic :: Scientific/Engineering :: Mathematics",
        "License :: OSI Approved :: MIT License",
        "Programming Language :: Python :: 3",
        "Programming Language :: Python :: 3.8",
        "Programming Language :: Python :: 3.9",
        "Programming Language :: Python :: 3.10",
        "Programming Language :: Python :: 3.11",
    ],
    python_requires=">=3.8",
    include_package_data=True,
)
