from setuptools import find_packages, setup

setup(
    name="grasp_capture",
    version="0.1.0",
    python_requires=">=3.9",
    zip_safe=True,
    packages=find_packages(include=["grasp_capture", "grasp_capture.*"]),
    description="Markerless grasp capture from 2D hand keypoints, depth and contact maps",
    install_requires=[
        # hydra
        "hydra-core==1.2.0",
        "hydra-joblib-launcher==1.2.0",
        # geometry
        "torch",
        "numpy<2",
        "scipy==1.11.3",
        "trimesh==4.0.5",
        # logging, eval, and plotting
        "matplotlib==3.8.1",
        "wandb==0.16.0",
        "pyyaml",
        "tqdm",
    ],
    extras_require={
        "interactive": ["jupyter==1.0.0"],
        "dev": ["isort==5.10.1", "black==22.10.0", "pytest"],
    },
)
