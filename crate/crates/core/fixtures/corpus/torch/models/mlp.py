import torch
import torch.nn as nn


class MLP(nn.Module):
    def __init__(self, d_in, d_hidden, n_classes):
        super().__init__()
        self.fc1 = nn.Linear(d_in, d_hidden)
        self.act = nn.ReLU()
        self.drop = nn.Dropout(0.1)
        self.fc2 = nn.Linear(d_hidden, n_classes, bias=False)

    def forward(self, x):
        x = torch.flatten(x, 1)
        return self.fc2(self.drop(self.act(self.fc1(x))))
